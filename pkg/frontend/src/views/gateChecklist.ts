// Live compliance-gate checklist. Every row state comes from the server's
// gate decision: a rule is shown as missing exactly when the decision lists
// it, so the rendered screen is a pure function of the API response. The
// what-if mode posts hypothetical events for a server-side dry run; the rule
// engine never runs in the browser.

import { GateWire, HypotheticalEvent } from '../api.js';
import { el } from '../dom.js';

export interface GateHandlers {
  onRecordEvent?: (kind: string) => void;
  onWhatIf?: (events: HypotheticalEvent[]) => void;
}

export function renderGateChecklist(gate: GateWire, handlers: GateHandlers = {}): HTMLElement {
  const missingIds = new Map(gate.missing.map(([id, text]) => [id, text]));
  const banner = el(
    'div',
    {
      class: `gate-banner ${gate.open ? 'gate-open' : 'gate-blocked'}`,
      'data-open': String(gate.open),
      'data-dry-run': String(Boolean(gate.dry_run)),
    },
    `${gate.gate}: ${gate.open ? 'OPEN' : 'BLOCKED'}`,
    gate.dry_run ? el('span', { class: 'chip chip-dryrun' }, 'what-if') : null,
  );

  const rows = gate.rules.map((rule) => {
    const missing = missingIds.has(rule.id);
    return el(
      'li',
      {
        class: `gate-rule ${missing ? 'rule-missing' : 'rule-satisfied'}`,
        'data-rule': rule.id,
        'data-state': missing ? 'missing' : 'satisfied',
      },
      el('span', { class: 'rule-mark' }, missing ? '✗' : '✓'),
      el('span', { class: 'rule-id' }, rule.id),
      el('span', { class: 'rule-citation' }, rule.citation),
      missing ? el('span', { class: 'rule-unmet' }, missingIds.get(rule.id) ?? '') : null,
    );
  });

  const root = el(
    'section',
    { class: 'gate-checklist', 'data-gate': gate.gate },
    banner,
    el('ul', { class: 'gate-rules' }, ...rows),
    el('div', { class: 'gate-evaluated' }, `evaluated ${gate.evaluated_at}`),
  );

  if (handlers.onWhatIf) {
    root.append(renderWhatIfForm(handlers.onWhatIf));
  }
  return root;
}

const EVENT_KINDS = [
  'sworn-statement-recorded',
  'grounds-asserted',
  'offence-described',
  'premises-described',
  'material-kinds-listed',
];

function renderWhatIfForm(onWhatIf: (events: HypotheticalEvent[]) => void): HTMLElement {
  const select = el('select', { class: 'whatif-kind' }) as HTMLSelectElement;
  for (const kind of EVENT_KINDS) {
    select.append(el('option', { value: kind }, kind));
  }
  const payload = el('input', {
    class: 'whatif-payload',
    placeholder: 'payload as JSON, e.g. {"present_now": true}',
  }) as HTMLInputElement;
  const button = el(
    'button',
    {
      class: 'whatif-run',
      onclick: () => {
        let parsed: Record<string, unknown> = {};
        if (payload.value.trim()) {
          try {
            parsed = JSON.parse(payload.value) as Record<string, unknown>;
          } catch {
            payload.classList.add('invalid');
            return;
          }
        }
        payload.classList.remove('invalid');
        onWhatIf([{ kind: select.value, occurred_at: new Date().toISOString(), payload: parsed }]);
      },
    },
    'evaluate what-if',
  );
  return el('div', { class: 'whatif-form' }, select, payload, button);
}

/** The rule ids a rendered checklist shows as missing, in row order. */
export function missingRuleIds(root: HTMLElement): string[] {
  return Array.from(root.querySelectorAll('[data-state="missing"]')).map(
    (n) => n.getAttribute('data-rule') ?? '',
  );
}

export function satisfiedRuleIds(root: HTMLElement): string[] {
  return Array.from(root.querySelectorAll('[data-state="satisfied"]')).map(
    (n) => n.getAttribute('data-rule') ?? '',
  );
}
