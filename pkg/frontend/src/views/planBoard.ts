// Plan board: the element tree with statuses and evidence badges, plus the
// "add line of inquiry" form. Tree shape, statuses, and evidence counts are
// read straight from the plan payload.

import { PlanWire, PlanElementWire } from '../api.js';
import { el } from '../dom.js';

export interface PlanHandlers {
  onAddGoal?: (template: string, params: Record<string, string>) => void;
  onExecute?: (elementId: string) => void;
}

export function renderPlanBoard(
  plan: PlanWire,
  templates: string[] = [],
  handlers: PlanHandlers = {},
): HTMLElement {
  const byId = new Map(plan.elements.map((e) => [e.id, e]));
  const tree = el('ul', { class: 'plan-tree' });
  for (const rootId of plan.roots) {
    const node = byId.get(rootId);
    if (node) tree.append(renderElement(node, byId, plan, handlers));
  }
  const root = el(
    'section',
    { class: 'plan-board', 'data-plan': plan.id },
    el('header', { class: 'plan-header' },
      el('h2', {}, `Plan ${plan.id}`),
      el('span', { class: 'plan-case' }, plan.case_ref),
      el('span', { class: 'plan-events' }, `${plan.events.length} events`)),
    tree,
  );
  if (handlers.onAddGoal) {
    root.append(renderAddForm(templates, handlers.onAddGoal));
  }
  return root;
}

function renderElement(
  element: PlanElementWire,
  byId: Map<string, PlanElementWire>,
  plan: PlanWire,
  handlers: PlanHandlers,
): HTMLElement {
  const evidence = plan.evidence[element.id] ?? [];
  const row = el(
    'div',
    { class: 'plan-element-row' },
    el('span', { class: `status status-${element.status}` }, element.status),
    el('span', { class: 'element-kind' }, element.kind),
    el('span', { class: 'element-text' }, element.text),
    element.kind === 'info-requirement'
      ? el('span', { class: 'badge evidence-badge', 'data-evidence': String(evidence.length) },
          `${evidence.length} facts`)
      : null,
    element.kind === 'info-requirement' && handlers.onExecute
      ? el('button', { class: 'execute', onclick: () => handlers.onExecute!(element.id) }, 'run')
      : null,
  );
  const item = el('li', { class: 'plan-element', 'data-element': element.id,
                          'data-status': element.status }, row);
  if (element.children.length) {
    const children = el('ul', { class: 'plan-children' });
    for (const childId of element.children) {
      const child = byId.get(childId);
      if (child) children.append(renderElement(child, byId, plan, handlers));
    }
    item.append(children);
  }
  return item;
}

function renderAddForm(
  templates: string[],
  onAddGoal: (template: string, params: Record<string, string>) => void,
): HTMLElement {
  const select = el('select', { class: 'goal-template' }) as HTMLSelectElement;
  for (const t of templates) select.append(el('option', { value: t }, t));
  const params = el('input', {
    class: 'goal-params',
    placeholder: 'slot=value, comma separated (e.g. subject=John Smith)',
  }) as HTMLInputElement;
  const button = el(
    'button',
    {
      class: 'goal-add',
      onclick: () => {
        const parsed: Record<string, string> = {};
        for (const piece of params.value.split(',')) {
          const idx = piece.indexOf('=');
          if (idx > 0) parsed[piece.slice(0, idx).trim()] = piece.slice(idx + 1).trim();
        }
        onAddGoal(select.value, parsed);
      },
    },
    'add line of inquiry',
  );
  return el('div', { class: 'goal-form' }, select, params, button);
}

export function elementStatuses(root: HTMLElement): Record<string, string> {
  const out: Record<string, string> = {};
  for (const node of root.querySelectorAll('[data-element]')) {
    out[node.getAttribute('data-element')!] = node.getAttribute('data-status')!;
  }
  return out;
}

export function evidenceCounts(root: HTMLElement): Record<string, number> {
  const out: Record<string, number> = {};
  for (const badge of root.querySelectorAll('[data-evidence]')) {
    const host = badge.closest('[data-element]');
    if (host) {
      out[host.getAttribute('data-element')!] =
        Number(badge.getAttribute('data-evidence'));
    }
  }
  return out;
}
