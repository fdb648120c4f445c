/**
 * Waveform panel: decimated line plot on a canvas with explanation
 * intervals drawn as translucent overlay divs positioned by the same
 * time-to-pixel mapping as the plot.
 */

export interface Interval {
  start_s: number;
  end_s: number;
}

export interface OverlayBox {
  leftPx: number;
  widthPx: number;
}

/** Map a time interval to pixel space; the overlay-position ground truth. */
export function overlayGeometry(
  interval: Interval,
  durationS: number,
  widthPx: number,
): OverlayBox {
  const scale = widthPx / durationS;
  const leftPx = interval.start_s * scale;
  return { leftPx, widthPx: Math.max(1, (interval.end_s - interval.start_s) * scale) };
}

/** Min/max decimation to one pair of points per pixel column. */
export function decimate(samples: number[], columns: number): { min: number; max: number }[] {
  const out: { min: number; max: number }[] = [];
  if (samples.length === 0 || columns <= 0) return out;
  const step = samples.length / columns;
  for (let c = 0; c < columns; c += 1) {
    const lo = Math.floor(c * step);
    const hi = Math.max(lo + 1, Math.floor((c + 1) * step));
    let min = samples[lo];
    let max = samples[lo];
    for (let i = lo; i < hi && i < samples.length; i += 1) {
      if (samples[i] < min) min = samples[i];
      if (samples[i] > max) max = samples[i];
    }
    out.push({ min, max });
  }
  return out;
}

export class WaveformView {
  private canvas: HTMLCanvasElement;

  private overlayLayer: HTMLElement;

  private durationS = 0;

  constructor(private root: HTMLElement) {
    this.canvas = document.createElement('canvas');
    this.canvas.className = 'waveform__canvas';
    this.canvas.width = root.clientWidth || 800;
    this.canvas.height = 160;
    this.overlayLayer = document.createElement('div');
    this.overlayLayer.className = 'waveform__overlays';
    root.classList.add('waveform');
    root.replaceChildren(this.canvas, this.overlayLayer);
  }

  get widthPx(): number {
    return this.canvas.width;
  }

  setSignal(samples: number[], samplingRateHz: number): void {
    this.durationS = samples.length / samplingRateHz;
    this.clearOverlays();
    const context = this.canvas.getContext ? this.canvas.getContext('2d') : null;
    if (!context) return; // headless test DOM: geometry still works
    const { width, height } = this.canvas;
    context.clearRect(0, 0, width, height);
    const columns = decimate(samples, width);
    let lo = Infinity;
    let hi = -Infinity;
    for (const c of columns) {
      lo = Math.min(lo, c.min);
      hi = Math.max(hi, c.max);
    }
    const span = hi - lo || 1;
    const y = (v: number) => height - ((v - lo) / span) * (height - 8) - 4;
    context.strokeStyle = '#2b7a78';
    context.lineWidth = 1;
    context.beginPath();
    columns.forEach((c, x) => {
      context.moveTo(x + 0.5, y(c.max));
      context.lineTo(x + 0.5, y(c.min) + 0.5);
    });
    context.stroke();
  }

  clearOverlays(): void {
    this.overlayLayer.replaceChildren();
  }

  /** Draw translucent highlight spans for explanation intervals. */
  showIntervals(intervals: Interval[]): void {
    this.clearOverlays();
    if (this.durationS <= 0) return;
    for (const interval of intervals) {
      const box = overlayGeometry(interval, this.durationS, this.widthPx);
      const overlay = document.createElement('div');
      overlay.className = 'waveform__overlay';
      overlay.dataset.startS = String(interval.start_s);
      overlay.dataset.endS = String(interval.end_s);
      overlay.style.left = `${box.leftPx}px`;
      overlay.style.width = `${box.widthPx}px`;
      this.overlayLayer.appendChild(overlay);
    }
  }

  setDuration(durationS: number): void {
    this.durationS = durationS;
  }
}
