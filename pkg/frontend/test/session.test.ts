import { afterEach, beforeEach, describe, expect, it, vi } from 'vitest';

import { ApiClient } from '../src/api';
import { UiSession } from '../src/session';
import type { Transcript, Turn } from '../src/types';
import { loadFixtures } from './fixtures';

const fixture = loadFixtures().get('classification')!;

function jsonResponse(payload: unknown, status = 200): Response {
  return new Response(JSON.stringify(payload), {
    status,
    headers: { 'Content-Type': 'application/json' },
  });
}

function transcriptAfter(turns: Turn[]): Transcript {
  return { ...fixture, turns, terminal: false };
}

describe('UiSession', () => {
  let root: HTMLElement;
  let notices: string[];
  let composerEnabled: boolean[];
  let session: UiSession;

  beforeEach(() => {
    root = document.createElement('div');
    document.body.replaceChildren(root);
    notices = [];
    composerEnabled = [];
    session = new UiSession(new ApiClient(''), {
      transcriptRoot: root,
      onNotice: (text) => notices.push(text),
      onComposerEnabled: (enabled) => composerEnabled.push(enabled),
    });
  });

  afterEach(() => {
    vi.unstubAllGlobals();
  });

  it('start creates a session and mirrors the server transcript', async () => {
    const calls: string[] = [];
    vi.stubGlobal('fetch', vi.fn(async (url: string, init?: RequestInit) => {
      calls.push(`${init?.method ?? 'GET'} ${url}`);
      if (url === '/v1/sessions') {
        return jsonResponse({ session_id: 's-1', lead_config: 'lead_ii',
                              record_id: 'demo' }, 201);
      }
      return jsonResponse(transcriptAfter(fixture.turns.slice(0, 1)));
    }));
    await session.start({ record_id: 'demo', sampling_rate_hz: 500,
                          leads: { II: [0, 1] } });
    expect(session.sessionId).toBe('s-1');
    expect(calls).toEqual(['POST /v1/sessions', 'GET /v1/sessions/s-1']);
    expect(root.children.length).toBe(1);
    expect(composerEnabled.at(-1)).toBe(true);
  });

  it('send posts the message then re-renders from the server', async () => {
    session.sessionId = 's-1';
    session.transcript = transcriptAfter([]);
    vi.stubGlobal('fetch', vi.fn(async (url: string, init?: RequestInit) => {
      if (init?.method === 'POST') {
        expect(JSON.parse(init.body as string)).toEqual({
          action: 'ecg_inquiry', content: 'heart rate?' });
        return jsonResponse({ turns: [], terminal: false });
      }
      return jsonResponse(transcriptAfter(fixture.turns.slice(0, 3)));
    }));
    await session.send('ecg_inquiry', 'heart rate?');
    expect(root.children.length).toBe(3);
    // no optimistic leftovers: everything re-rendered from the server
    expect(root.querySelectorAll('.bubble--optimistic').length).toBe(0);
    expect(session.pending).toBe(false);
  });

  it('409 keeps the session usable and shows a notice', async () => {
    session.sessionId = 's-1';
    session.transcript = transcriptAfter([]);
    vi.stubGlobal('fetch', vi.fn(async () =>
      jsonResponse({ code: 'turn_in_flight', message: 'busy' }, 409)));
    await session.send('ecg_inquiry', 'hi');
    expect(notices).toEqual(['Another message is still being processed.']);
    expect(session.terminal).toBe(false);
    expect(root.querySelectorAll('.bubble--optimistic').length).toBe(0);
    expect(composerEnabled.at(-1)).toBe(true);
  });

  it('410 disables the composer permanently', async () => {
    session.sessionId = 's-1';
    session.transcript = transcriptAfter([]);
    vi.stubGlobal('fetch', vi.fn(async () =>
      jsonResponse({ code: 'session_terminal', message: 'over' }, 410)));
    await session.send('user_bye', 'bye');
    expect(session.terminal).toBe(true);
    expect(composerEnabled.at(-1)).toBe(false);
  });

  it('refuses to double-send while pending', async () => {
    session.sessionId = 's-1';
    session.transcript = transcriptAfter([]);
    let resolveFirst: (r: Response) => void = () => {};
    const fetchMock = vi.fn(async (url: string, init?: RequestInit) => {
      if (init?.method === 'POST') {
        return new Promise<Response>((resolve) => { resolveFirst = resolve; });
      }
      return jsonResponse(transcriptAfter([]));
    });
    vi.stubGlobal('fetch', fetchMock);
    const first = session.send('ecg_inquiry', 'one');
    await Promise.resolve();
    expect(session.pending).toBe(true);
    await session.send('ecg_inquiry', 'two');  // dropped while pending
    expect(fetchMock.mock.calls.filter(([, i]) => i?.method === 'POST').length).toBe(1);
    resolveFirst(jsonResponse({ turns: [], terminal: false }));
    await first;
    expect(session.pending).toBe(false);
  });
});
