/** Thin typed client for the /v1 HTTP API. */

import type {
  MessageReply,
  RecordPayload,
  SessionInfo,
  Transcript,
  UserAction,
} from './types.js';

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

async function throwApiError(response: Response): Promise<never> {
  let code = 'unknown';
  let message = `HTTP ${response.status}`;
  try {
    const body = await response.json();
    code = body.code ?? code;
    message = body.message ?? message;
  } catch {
    // non-JSON error body; keep the defaults
  }
  throw new ApiError(response.status, code, message);
}

export class ApiClient {
  constructor(private baseUrl: string = '') {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await fetch(this.baseUrl + path, init);
    if (!response.ok) {
      await throwApiError(response);
    }
    return response.json() as Promise<T>;
  }

  health(): Promise<{ status: string; version: string }> {
    return this.request('/v1/health');
  }

  createSession(record: RecordPayload, leadConfig?: string): Promise<SessionInfo> {
    const body: Record<string, unknown> = { record };
    if (leadConfig) body.lead_config = leadConfig;
    return this.request('/v1/sessions', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  sendMessage(sessionId: string, action: UserAction, content: string): Promise<MessageReply> {
    return this.request(`/v1/sessions/${sessionId}/messages`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ action, content }),
    });
  }

  getTranscript(sessionId: string): Promise<Transcript> {
    return this.request(`/v1/sessions/${sessionId}`);
  }
}
