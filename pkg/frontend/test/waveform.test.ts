import { beforeEach, describe, expect, it } from 'vitest';

import { latestExplanationIntervals } from '../src/transcript';
import { WaveformView, decimate, overlayGeometry } from '../src/waveform';
import { loadFixtures } from './fixtures';

describe('overlay geometry', () => {
  it('maps interval endpoints linearly into pixel space', () => {
    const box = overlayGeometry({ start_s: 2.5, end_s: 5.0 }, 10, 800);
    expect(box.leftPx).toBeCloseTo(200, 6);
    expect(box.widthPx).toBeCloseTo(200, 6);
  });

  it('keeps sub-sample accuracy for fixture intervals', () => {
    const fixture = loadFixtures().get('explanation')!;
    const widthPx = 800;
    const duration = fixture.record_duration_s;
    const samplePx = widthPx / (duration * 500); // px per 500 Hz sample
    for (const interval of latestExplanationIntervals(fixture)) {
      const box = overlayGeometry(interval, duration, widthPx);
      const expectedLeft = (interval.start_s / duration) * widthPx;
      const expectedRight = (interval.end_s / duration) * widthPx;
      expect(Math.abs(box.leftPx - expectedLeft)).toBeLessThanOrEqual(samplePx);
      expect(Math.abs(box.leftPx + box.widthPx - expectedRight)).toBeLessThanOrEqual(samplePx);
    }
  });
});

describe('decimation', () => {
  it('preserves extremes within each column', () => {
    const samples = Array.from({ length: 1000 }, (_, i) => Math.sin(i / 10));
    const columns = decimate(samples, 100);
    expect(columns.length).toBe(100);
    for (const column of columns) {
      expect(column.min).toBeLessThanOrEqual(column.max);
      expect(column.max).toBeLessThanOrEqual(1);
      expect(column.min).toBeGreaterThanOrEqual(-1);
    }
    const peak = Math.max(...columns.map((c) => c.max));
    expect(peak).toBeCloseTo(1, 2);
  });

  it('handles empty input', () => {
    expect(decimate([], 10)).toEqual([]);
  });
});

describe('WaveformView overlays', () => {
  let root: HTMLElement;

  beforeEach(() => {
    root = document.createElement('div');
    document.body.replaceChildren(root);
  });

  it('positions overlay divs to match the tool output intervals', () => {
    const fixture = loadFixtures().get('explanation')!;
    const view = new WaveformView(root);
    view.setDuration(fixture.record_duration_s);
    const intervals = latestExplanationIntervals(fixture);
    view.showIntervals(intervals);

    const overlays = [...root.querySelectorAll<HTMLElement>('.waveform__overlay')];
    expect(overlays.length).toBe(intervals.length);
    overlays.forEach((overlay, i) => {
      const expected = overlayGeometry(intervals[i], fixture.record_duration_s,
                                       view.widthPx);
      expect(parseFloat(overlay.style.left)).toBeCloseTo(expected.leftPx, 3);
      expect(parseFloat(overlay.style.width)).toBeCloseTo(expected.widthPx, 3);
      expect(overlay.dataset.startS).toBe(String(intervals[i].start_s));
    });
  });

  it('clears overlays when a new signal arrives', () => {
    const view = new WaveformView(root);
    view.setDuration(10);
    view.showIntervals([{ start_s: 1, end_s: 2 }]);
    expect(root.querySelectorAll('.waveform__overlay').length).toBe(1);
    view.setSignal(new Array(5000).fill(0), 500);
    expect(root.querySelectorAll('.waveform__overlay').length).toBe(0);
  });
});
