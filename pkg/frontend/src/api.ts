// Typed client for the hub node's HTTP API. The console holds no business
// logic: every decision shown on screen (redaction, ranking, gate state)
// comes from these responses verbatim.

export interface FactWire {
  id: string;
  subject: string;
  predicate: string;
  object: { kind: string; value: unknown };
  partition: string;
  envelope: {
    source: string;
    activity: string;
    agent: string;
    recorded_at: string;
    valid_from?: string;
    valid_to?: string;
    visibility: string;
    confidence: number;
    external_refs: [string, string][];
  };
}

export interface ActivityWire {
  id: string;
  kind: string;
  started_at: string;
  ended_at: string;
  agent: string;
  inputs: string[];
}

export interface ConsolidatedViewWire {
  id: string;
  members: string[];
  score: number;
  sources: string[];
  facts: FactWire[];
}

export interface PerSourceWire {
  source: string;
  status: 'ok' | 'timeout' | 'error';
  error: string;
  elapsed_ms: number;
  facts: number;
}

export interface QueryResultWire {
  entities: ConsolidatedViewWire[];
  per_source: PerSourceWire[];
  links_applied: { left: string; right: string; score: number }[];
}

export interface PlanElementWire {
  id: string;
  kind: 'goal' | 'info-requirement';
  template: string;
  text: string;
  status: 'pending' | 'running' | 'satisfied' | 'blocked';
  children: string[];
  query: unknown | null;
}

export interface PlanWire {
  id: string;
  case_ref: string;
  created_at: string;
  elements: PlanElementWire[];
  roots: string[];
  evidence: Record<string, string[]>;
  events: { id: string; kind: string; occurred_at: string; payload: Record<string, unknown> }[];
  gate_decisions: Record<string, unknown>;
}

export interface GateRuleWire {
  id: string;
  citation: string;
}

export interface GateWire {
  gate: string;
  open: boolean;
  missing: [string, string][];
  evaluated_at: string;
  rules: GateRuleWire[];
  dry_run?: boolean;
}

export interface HealthWire {
  status: string;
  node: string;
  version: string;
  facts: number;
  digest: string;
}

export interface WhoamiWire {
  principal: string;
  granted: string[];
  presented: string[];
}

export interface HypotheticalEvent {
  kind: string;
  occurred_at: string;
  payload: Record<string, unknown>;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export class HubClient {
  constructor(
    readonly baseUrl: string,
    public principal: string = '',
    public tokens: string[] = [],
  ) {}

  private headers(): Record<string, string> {
    const h: Record<string, string> = { 'Content-Type': 'application/json' };
    if (this.principal) h['X-Principal'] = this.principal;
    h['X-Tokens'] = this.tokens.join(',');
    return h;
  }

  private async call<T>(method: string, path: string, body?: unknown): Promise<T> {
    const res = await fetch(this.baseUrl + path, {
      method,
      headers: this.headers(),
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await res.json();
    if (!res.ok) {
      throw new ApiError(res.status, (payload as { error?: string }).error ?? res.statusText);
    }
    return payload as T;
  }

  health(): Promise<HealthWire> {
    return this.call('GET', '/health');
  }

  whoami(): Promise<WhoamiWire> {
    return this.call('GET', '/whoami');
  }

  query(body: Record<string, unknown>): Promise<QueryResultWire> {
    return this.call('POST', '/query', body);
  }

  entity(id: string): Promise<{ id: string; concept: string; facts: FactWire[] }> {
    return this.call('GET', `/entities/${encodeURIComponent(id)}`);
  }

  provenance(factId: string): Promise<{ fact: FactWire; chain: ActivityWire[] }> {
    return this.call('GET', `/facts/${encodeURIComponent(factId)}/provenance`);
  }

  plans(): Promise<{ plans: string[] }> {
    return this.call('GET', '/plans');
  }

  plan(id: string): Promise<PlanWire> {
    return this.call('GET', `/plans/${encodeURIComponent(id)}`);
  }

  createPlan(caseRef: string): Promise<PlanWire> {
    return this.call('POST', '/plans', { case_ref: caseRef });
  }

  addGoal(planId: string, template: string, params: Record<string, string>):
      Promise<{ added: string[]; plan: PlanWire }> {
    return this.call('POST', `/plans/${encodeURIComponent(planId)}/goals`,
      { template, params, execute: true });
  }

  recordEvent(planId: string, kind: string, payload: Record<string, unknown>,
              occurredAt?: string): Promise<{ event: unknown }> {
    const body: Record<string, unknown> = { kind, payload };
    if (occurredAt) body.occurred_at = occurredAt;
    return this.call('POST', `/plans/${encodeURIComponent(planId)}/events`, body);
  }

  gate(planId: string, gate: string): Promise<GateWire> {
    return this.call('GET',
      `/plans/${encodeURIComponent(planId)}/gates/${encodeURIComponent(gate)}`);
  }

  gateDryRun(planId: string, gate: string, events: HypotheticalEvent[]): Promise<GateWire> {
    return this.call('POST',
      `/plans/${encodeURIComponent(planId)}/gates/${encodeURIComponent(gate)}`,
      { dry_run: true, hypothetical_events: events });
  }
}
