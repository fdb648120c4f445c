/** Wire types mirroring the /v1 JSON payloads. */

export type Speaker = 'user' | 'agent';

export type UserAction = 'ecg_inquiry' | 'request_follow_up' | 'user_bye';

export type AgentAction =
  | 'response'
  | 'response_fail'
  | 'response_follow_up'
  | 'system_bye'
  | 'call_classification'
  | 'call_measurement'
  | 'call_explanation';

export type ToolName = 'classification' | 'measurement' | 'explanation';

export interface ExplanationInterval {
  start_s: number;
  end_s: number;
  saliency: number | null;
}

export interface ToolOutput {
  tool: ToolName;
  status: 'valid' | 'invalid';
  body?: Record<string, unknown> & { intervals?: ExplanationInterval[] };
  reason?: string;
}

export interface Turn {
  speaker: Speaker;
  action: UserAction | AgentAction;
  content?: string;
  thought?: string;
  tool_output?: ToolOutput;
}

export interface Transcript {
  schema_version: number;
  dialogue_id: string;
  scenario: { topic: string; cefr: string; action_sequence_id: string };
  lead_config: 'twelve_lead' | 'lead_i' | 'lead_ii';
  ecg_record_ref: string;
  turns: Turn[];
  created_at?: number;
  updated_at?: number;
  terminal?: boolean;
}

export interface SessionInfo {
  session_id: string;
  lead_config: string;
  record_id: string;
}

export interface MessageReply {
  turns: Turn[];
  terminal: boolean;
}

export interface RecordPayload {
  record_id: string;
  sampling_rate_hz: number;
  leads: Record<string, number[]>;
}

export const TOOL_ACTIONS: ReadonlySet<string> = new Set([
  'call_classification',
  'call_measurement',
  'call_explanation',
]);
