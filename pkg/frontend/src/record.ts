/**
 * Client-side record sources: a demo PQRST generator (presentational; the
 * server tools do the real analysis on whatever samples we upload) and a
 * CSV parser matching the backend's format (header row of lead names, one
 * sample row per time step, millivolts).
 */

import type { RecordPayload } from './types.js';

function gaussian(t: number, center: number, sigma: number, amplitude: number): number {
  const d = (t - center) / sigma;
  return amplitude * Math.exp(-0.5 * d * d);
}

export function demoRecord(heartRateBpm: number, durationS = 10, rateHz = 500): RecordPayload {
  const n = Math.round(durationS * rateHz);
  const rrS = 60 / heartRateBpm;
  const samples = new Array<number>(n).fill(0);
  for (let beat = 0; beat * rrS + 0.9 * rrS < durationS; beat += 1) {
    const r = 0.35 + beat * rrS;
    for (let i = Math.max(0, Math.round((r - 0.45) * rateHz));
         i < Math.min(n, Math.round((r + 0.55) * rateHz)); i += 1) {
      const t = i / rateHz;
      samples[i] +=
        gaussian(t, r - 0.16, 0.025, 0.15) +
        gaussian(t, r - 0.035, 0.006, -0.12) +
        gaussian(t, r, 0.01, 1.0) +
        gaussian(t, r + 0.03, 0.007, -0.25) +
        gaussian(t, r + 0.26, 0.045, 0.35);
    }
  }
  return {
    record_id: `demo-${heartRateBpm}bpm`,
    sampling_rate_hz: rateHz,
    leads: { II: samples },
  };
}

export function parseCsvRecord(
  text: string,
  samplingRateHz: number,
  recordId = 'uploaded',
): RecordPayload {
  const lines = text.split(/\r?\n/).filter((line) => line.trim().length > 0);
  if (lines.length < 2) {
    throw new Error('CSV needs a header row and at least one sample row');
  }
  const names = lines[0].split(',').map((s) => s.trim());
  const leads: Record<string, number[]> = {};
  for (const name of names) leads[name] = [];
  for (let i = 1; i < lines.length; i += 1) {
    const cells = lines[i].split(',');
    if (cells.length !== names.length) {
      throw new Error(`row ${i + 1} has ${cells.length} values, expected ${names.length}`);
    }
    cells.forEach((cell, column) => {
      const value = Number(cell);
      if (!Number.isFinite(value)) {
        throw new Error(`non-numeric sample at row ${i + 1}`);
      }
      leads[names[column]].push(value);
    });
  }
  return { record_id: recordId, sampling_rate_hz: samplingRateHz, leads };
}
