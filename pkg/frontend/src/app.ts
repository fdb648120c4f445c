/** Page wiring: record setup, waveform, transcript, composer. */

import { ApiClient } from './api.js';
import { demoRecord, parseCsvRecord } from './record.js';
import { UiSession } from './session.js';
import type { RecordPayload, UserAction } from './types.js';
import { WaveformView } from './waveform.js';

function byId<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

export function bootstrap(): void {
  const api = new ApiClient('');
  const waveform = new WaveformView(byId('waveform'));
  const notice = byId<HTMLElement>('notice');
  const composer = byId<HTMLTextAreaElement>('composer-text');
  const sendButton = byId<HTMLButtonElement>('composer-send');
  const actionSelect = byId<HTMLSelectElement>('composer-action');
  const explainHint = byId<HTMLElement>('explain-hint');

  const session = new UiSession(api, {
    transcriptRoot: byId('transcript'),
    waveform,
    onNotice: (text) => {
      notice.textContent = text;
      notice.classList.remove('hidden');
      setTimeout(() => notice.classList.add('hidden'), 4000);
    },
    onComposerEnabled: (enabled) => {
      composer.disabled = !enabled;
      sendButton.disabled = !enabled;
    },
  });

  let currentRecord: RecordPayload | null = null;

  async function startSession(record: RecordPayload): Promise<void> {
    currentRecord = record;
    const lead = Object.keys(record.leads)[0];
    waveform.setSignal(record.leads[lead], record.sampling_rate_hz);
    await session.start(record);
    byId('session-label').textContent =
      `session ${session.sessionId} · ${session.leadConfig} · ${record.record_id}`;
    // the explanation tool only runs on single-lead recordings
    explainHint.classList.toggle('hidden', session.leadConfig === 'twelve_lead');
  }

  byId<HTMLButtonElement>('start-demo').addEventListener('click', () => {
    const hr = Number(byId<HTMLInputElement>('demo-hr').value) || 75;
    startSession(demoRecord(hr)).catch((error) => {
      notice.textContent = String(error);
      notice.classList.remove('hidden');
    });
  });

  byId<HTMLInputElement>('upload-file').addEventListener('change', async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    const rate = Number(byId<HTMLInputElement>('upload-rate').value) || 500;
    try {
      const record = parseCsvRecord(await file.text(), rate, file.name.replace(/\.csv$/, ''));
      await startSession(record);
    } catch (error) {
      notice.textContent = String(error);
      notice.classList.remove('hidden');
    }
  });

  async function send(): Promise<void> {
    const content = composer.value.trim();
    if (!content || !currentRecord) return;
    composer.value = '';
    await session.send(actionSelect.value as UserAction, content);
  }

  sendButton.addEventListener('click', () => void send());
  composer.addEventListener('keydown', (event) => {
    if (event.key === 'Enter' && !event.shiftKey) {
      event.preventDefault();
      void send();
    }
  });

  for (const button of document.querySelectorAll<HTMLButtonElement>('[data-quick]')) {
    button.addEventListener('click', () => {
      composer.value = button.dataset.quick ?? '';
      composer.focus();
    });
  }
}

if (typeof document !== 'undefined' && document.readyState !== 'loading') {
  bootstrap();
} else if (typeof document !== 'undefined') {
  document.addEventListener('DOMContentLoaded', bootstrap);
}
