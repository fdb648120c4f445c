import { readFileSync, readdirSync } from 'node:fs';
import { join } from 'node:path';

import type { Transcript } from '../src/types';

export interface Fixture extends Transcript {
  record_duration_s: number;
}

const FIXTURE_DIR = join(__dirname, 'fixtures');

export function loadFixtures(): Map<string, Fixture> {
  const fixtures = new Map<string, Fixture>();
  for (const name of readdirSync(FIXTURE_DIR).sort()) {
    if (!name.endsWith('.json')) continue;
    const raw = readFileSync(join(FIXTURE_DIR, name), 'utf-8');
    fixtures.set(name.replace(/\.json$/, ''), JSON.parse(raw));
  }
  return fixtures;
}
