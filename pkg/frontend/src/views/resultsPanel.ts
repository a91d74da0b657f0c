// Federated results panel: consolidated entity cards with per-source badges,
// per-source status chips (ok / timeout / error), and a provenance drawer
// per fact filled from the provenance endpoint on demand.

import { ActivityWire, FactWire, QueryResultWire } from '../api.js';
import { el } from '../dom.js';

export interface ResultsHandlers {
  fetchProvenance?: (factId: string) => Promise<{ chain: ActivityWire[] }>;
}

export function renderResultsPanel(
  result: QueryResultWire,
  handlers: ResultsHandlers = {},
): HTMLElement {
  const chips = result.per_source.map((p) =>
    el(
      'span',
      {
        class: `chip chip-${p.status}`,
        'data-source': p.source,
        'data-status': p.status,
        title: p.error || `${p.facts} facts in ${p.elapsed_ms}ms`,
      },
      `${p.source}: ${p.status}`,
    ),
  );

  const cards = result.entities.map((view) =>
    el(
      'article',
      { class: 'entity-card', 'data-entity': view.id },
      el('header', { class: 'entity-header' },
        el('span', { class: 'entity-id' }, view.id),
        el('span', { class: 'entity-score' }, view.score.toFixed(3)),
        ...view.sources.map((s) =>
          el('span', { class: 'badge source-badge', 'data-source': s }, s))),
      view.members.length > 1
        ? el('div', { class: 'entity-members' },
            `consolidates ${view.members.join(', ')}`)
        : null,
      el('ul', { class: 'fact-list' },
        ...view.facts.map((f) => renderFactRow(f, handlers))),
    ),
  );

  return el(
    'section',
    { class: 'results-panel' },
    el('div', { class: 'per-source' }, ...chips),
    el('div', { class: 'entities' }, ...cards),
  );
}

function renderFactRow(fact: FactWire, handlers: ResultsHandlers): HTMLElement {
  const drawer = el('div', { class: 'provenance-drawer', hidden: 'hidden' });
  const row = el(
    'li',
    { class: 'fact-row', 'data-fact': fact.id },
    el('span', { class: 'fact-predicate' }, fact.predicate),
    el('span', { class: 'fact-value' }, String(fact.object.value)),
    el('span', { class: 'badge source-badge' }, fact.envelope.source),
    el('span', { class: 'fact-confidence' }, fact.envelope.confidence.toFixed(2)),
    handlers.fetchProvenance
      ? el('button', {
          class: 'provenance-toggle',
          onclick: async () => {
            if (!drawer.hasAttribute('hidden')) {
              drawer.setAttribute('hidden', 'hidden');
              return;
            }
            const { chain } = await handlers.fetchProvenance!(fact.id);
            drawer.replaceChildren(renderChain(chain));
            drawer.removeAttribute('hidden');
          },
        }, 'provenance')
      : null,
    drawer,
  );
  return row;
}

function renderChain(chain: ActivityWire[]): HTMLElement {
  return el(
    'ol',
    { class: 'provenance-chain' },
    ...chain.map((a) =>
      el('li', { class: 'chain-step', 'data-activity': a.id, 'data-kind': a.kind },
        el('span', { class: 'chain-kind' }, a.kind),
        el('span', { class: 'chain-agent' }, a.agent),
        el('span', { class: 'chain-time' }, a.started_at))),
  );
}

export function renderedFactIds(root: HTMLElement): string[] {
  return Array.from(root.querySelectorAll('[data-fact]')).map(
    (n) => n.getAttribute('data-fact') ?? '',
  );
}

export function sourceStatusChips(root: HTMLElement): Record<string, string> {
  const out: Record<string, string> = {};
  for (const chip of root.querySelectorAll('.per-source [data-source]')) {
    out[chip.getAttribute('data-source')!] = chip.getAttribute('data-status')!;
  }
  return out;
}
