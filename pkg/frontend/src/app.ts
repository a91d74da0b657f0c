// Console shell: session bar (principal + token selector), plan board,
// query box with the federated results panel, and the warrant-gate
// checklist. All state lives on the server; this module only re-fetches and
// re-renders.

import { GateWire, HubClient, PlanWire, QueryResultWire } from './api.js';
import { clear, el } from './dom.js';
import { SessionContext, newSession, toggleToken } from './session.js';
import { renderGateChecklist } from './views/gateChecklist.js';
import { renderPlanBoard } from './views/planBoard.js';
import { renderResultsPanel } from './views/resultsPanel.js';

const TEMPLATES = [
  'criminal-history',
  'firearms-check',
  'prior-warrants',
  'premises-occupants',
  'warrant-application',
];

export class ConsoleApp {
  session: SessionContext;
  private lastResult: QueryResultWire | null = null;
  private lastError = '';

  constructor(
    readonly client: HubClient,
    readonly root: HTMLElement,
    readonly gateName = 'issue-warrant',
  ) {
    this.session = newSession(client.principal, []);
  }

  async start(): Promise<void> {
    const who = await this.client.whoami();
    this.session = newSession(who.principal, who.granted);
    this.client.tokens = this.session.selected;
    await this.refresh();
  }

  async refresh(): Promise<void> {
    this.client.tokens = this.session.selected;
    let plan: PlanWire | null = null;
    let gate: GateWire | null = null;
    try {
      if (!this.session.activePlan) {
        const { plans } = await this.client.plans();
        this.session.activePlan = plans[plans.length - 1] ?? null;
      }
      if (this.session.activePlan) {
        plan = await this.client.plan(this.session.activePlan);
        gate = await this.client.gate(this.session.activePlan, this.gateName);
      }
      this.lastError = '';
    } catch (err) {
      this.lastError = String(err);
    }
    this.render(plan, gate);
  }

  private render(plan: PlanWire | null, gate: GateWire | null): void {
    clear(this.root);
    this.root.append(this.renderSessionBar());
    if (this.lastError) {
      this.root.append(el('div', { class: 'error-banner' }, this.lastError));
    }
    this.root.append(this.renderQueryBox());
    if (this.lastResult) {
      this.root.append(
        renderResultsPanel(this.lastResult, {
          fetchProvenance: (id) => this.client.provenance(id),
        }),
      );
    }
    if (plan) {
      this.root.append(
        renderPlanBoard(plan, TEMPLATES, {
          onAddGoal: async (template, params) => {
            await this.client.addGoal(plan.id, template, params);
            await this.refresh();
          },
        }),
      );
    }
    if (gate) {
      this.root.append(
        renderGateChecklist(gate, {
          onWhatIf: async (events) => {
            const decision = await this.client.gateDryRun(plan!.id, this.gateName, events);
            const existing = this.root.querySelector('.gate-checklist');
            const rendered = renderGateChecklist(decision, {
              onWhatIf: async () => this.refresh(),
            });
            if (existing) existing.replaceWith(rendered);
          },
        }),
      );
    }
  }

  private renderSessionBar(): HTMLElement {
    const boxes = this.session.granted.map((token) =>
      el('label', { class: 'token-option' },
        el('input', {
          type: 'checkbox',
          value: token,
          ...(this.session.selected.includes(token) ? { checked: 'checked' } : {}),
          onchange: async () => {
            this.session = toggleToken(this.session, token);
            await this.refreshQueryAndViews();
          },
        } as Record<string, string | ((ev: Event) => void)>),
        token));
    return el(
      'header',
      { class: 'session-bar' },
      el('span', { class: 'session-principal' },
        this.session.principal || '(anonymous)'),
      el('span', { class: 'session-tokens' }, ...boxes),
      el('button', { class: 'session-refresh', onclick: () => this.refresh() }, 'refresh'),
    );
  }

  private renderQueryBox(): HTMLElement {
    const input = el('input', {
      class: 'query-input',
      placeholder: 'keyword search across the federation',
    }) as HTMLInputElement;
    const federate = el('input', { type: 'checkbox', class: 'query-federate' }) as HTMLInputElement;
    const run = el('button', {
      class: 'query-run',
      onclick: () => this.runQuery(input.value, federate.checked),
    }, 'search');
    return el('div', { class: 'query-box' },
      input, el('label', {}, federate, 'federate'), run);
  }

  async runQuery(keyword: string, federate: boolean): Promise<void> {
    this.client.tokens = this.session.selected;
    this.lastResult = await this.client.query({ keyword, federate });
    await this.refresh();
  }

  /** token switch: re-run the last query under the new context, then redraw */
  private async refreshQueryAndViews(): Promise<void> {
    this.client.tokens = this.session.selected;
    await this.refresh();
  }
}
