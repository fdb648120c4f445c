/**
 * Session controller: owns the pending flag and keeps the rendered
 * transcript equal to the server's after every exchange (the server is the
 * single source of truth; the optimistic user bubble lives only while a
 * message is in flight).
 */

import { ApiClient, ApiError } from './api.js';
import { latestExplanationIntervals, renderTranscript, renderTurn } from './transcript.js';
import type { RecordPayload, Transcript, UserAction } from './types.js';
import type { WaveformView } from './waveform.js';

export interface SessionViewHooks {
  transcriptRoot: HTMLElement;
  waveform?: WaveformView;
  onNotice?: (text: string) => void;
  onComposerEnabled?: (enabled: boolean) => void;
}

export class UiSession {
  sessionId = '';

  leadConfig = '';

  pending = false;

  terminal = false;

  transcript: Transcript | null = null;

  constructor(
    private api: ApiClient,
    private hooks: SessionViewHooks,
  ) {}

  async start(record: RecordPayload, leadConfig?: string): Promise<void> {
    const info = await this.api.createSession(record, leadConfig);
    this.sessionId = info.session_id;
    this.leadConfig = info.lead_config;
    this.terminal = false;
    await this.refresh();
    this.hooks.onComposerEnabled?.(true);
  }

  /** Re-render from GET /sessions/{id}; the mirror invariant lives here. */
  async refresh(): Promise<void> {
    this.transcript = await this.api.getTranscript(this.sessionId);
    this.terminal = Boolean(this.transcript.terminal);
    renderTranscript(this.hooks.transcriptRoot, this.transcript);
    this.hooks.waveform?.showIntervals(latestExplanationIntervals(this.transcript));
    if (this.terminal) {
      this.hooks.onComposerEnabled?.(false);
    }
  }

  async send(action: UserAction, content: string): Promise<void> {
    if (this.pending || this.terminal || !this.sessionId) return;
    this.pending = true;
    this.hooks.onComposerEnabled?.(false);
    const optimistic = renderTurn(
      { speaker: 'user', action, content },
      this.transcript?.turns.length ?? 0,
    );
    optimistic.classList.add('bubble--optimistic');
    this.hooks.transcriptRoot.appendChild(optimistic);
    try {
      await this.api.sendMessage(this.sessionId, action, content);
      await this.refresh();
    } catch (error) {
      optimistic.remove();
      if (error instanceof ApiError && error.status === 409) {
        this.hooks.onNotice?.('Another message is still being processed.');
      } else if (error instanceof ApiError && error.status === 410) {
        this.terminal = true;
        this.hooks.onNotice?.('This conversation has ended.');
      } else {
        this.hooks.onNotice?.(error instanceof Error ? error.message : String(error));
      }
    } finally {
      this.pending = false;
      this.hooks.onComposerEnabled?.(!this.terminal);
    }
  }
}
