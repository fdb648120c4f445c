/**
 * Transcript rendering: one bubble per turn, in server order.
 *
 * The server transcript is the single source of truth; every number and
 * label shown here is copied verbatim from the turn payload. Tool turns
 * render as trace cards with an action badge, the collapsible thought, and
 * the tool output with its status always visible. `response_fail` turns and
 * invalid tool outputs get visually distinct classes.
 */

import { TOOL_ACTIONS, type ToolOutput, type Transcript, type Turn } from './types.js';

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function toolSummaryLines(output: ToolOutput): string[] {
  if (output.status === 'invalid') {
    return [`reason: ${output.reason ?? 'unknown'}`];
  }
  const body = output.body ?? {};
  if (output.tool === 'measurement') {
    const keys = [
      'heart_rate_bpm',
      'rr_mean_ms',
      'pr_interval_ms',
      'qrs_duration_ms',
      'qt_interval_ms',
      'qtc_interval_ms',
      'beat_count',
      'lead_used',
    ];
    return keys
      .filter((k) => body[k] !== null && body[k] !== undefined)
      .map((k) => `${k}: ${String(body[k])}`);
  }
  if (output.tool === 'classification') {
    const predicted = (body.predicted as string[]) ?? [];
    const trace = (body.rule_trace as Record<string, string>) ?? {};
    const lines = [`predicted: ${predicted.join(', ') || '(none)'}`];
    for (const code of predicted) {
      if (trace[code]) lines.push(`${code} via ${trace[code]}`);
    }
    return lines;
  }
  const intervals = body.intervals ?? [];
  const lines = [`class: ${String(body.class ?? '?')}`];
  for (const iv of intervals) {
    lines.push(`${String(iv.start_s)}–${String(iv.end_s)} s`);
  }
  return lines;
}

export function renderTurn(turn: Turn, index: number): HTMLElement {
  const isTool = TOOL_ACTIONS.has(turn.action);
  const classes = ['bubble', `bubble--${turn.speaker}`];
  if (turn.action === 'response_fail') classes.push('bubble--fail');
  if (isTool) classes.push('bubble--tool');
  const bubble = el('article', classes.join(' '));
  bubble.dataset.turnIndex = String(index);
  bubble.dataset.action = turn.action;

  const badge = el('span', 'badge', turn.action.replace(/_/g, ' '));
  bubble.appendChild(badge);

  if (turn.speaker === 'agent' && turn.thought) {
    const details = el('details', 'thought') as HTMLDetailsElement;
    details.appendChild(el('summary', 'thought__label', 'thought'));
    details.appendChild(el('p', 'thought__text', turn.thought));
    bubble.appendChild(details);
  }

  if (isTool && turn.tool_output) {
    const output = turn.tool_output;
    const card = el('div', 'tool-card');
    const statusClass = output.status === 'valid' ? 'status--valid' : 'status--invalid';
    const header = el('div', 'tool-card__header');
    header.appendChild(el('span', 'tool-card__name', output.tool));
    header.appendChild(el('span', `status ${statusClass}`, output.status));
    card.appendChild(header);
    const list = el('ul', 'tool-card__fields');
    for (const line of toolSummaryLines(output)) {
      list.appendChild(el('li', 'tool-card__field', line));
    }
    card.appendChild(list);
    bubble.appendChild(card);
  } else if (turn.content !== undefined) {
    bubble.appendChild(el('p', 'bubble__text', turn.content));
  }
  return bubble;
}

export function renderTranscript(container: HTMLElement, transcript: Transcript): void {
  container.replaceChildren();
  transcript.turns.forEach((turn, index) => {
    container.appendChild(renderTurn(turn, index));
  });
}

/** Explanation intervals of the latest valid explanation output, if any. */
export function latestExplanationIntervals(
  transcript: Transcript,
): { start_s: number; end_s: number }[] {
  for (let i = transcript.turns.length - 1; i >= 0; i -= 1) {
    const output = transcript.turns[i].tool_output;
    if (output?.tool === 'explanation' && output.status === 'valid') {
      return (output.body?.intervals ?? []).map((iv) => ({
        start_s: iv.start_s,
        end_s: iv.end_s,
      }));
    }
  }
  return [];
}
