// Console shell against a live node: session bar from /whoami, plan board
// refresh after adding a line of inquiry, and token-driven re-rendering.

import { afterAll, beforeAll, describe, expect, it } from 'vitest';
import { HubClient } from '../src/api.js';
import { ConsoleApp } from '../src/app.js';
import { LiveHub, startHub } from './hub.js';

let hub: LiveHub;

beforeAll(async () => {
  hub = await startHub();
});

afterAll(async () => {
  await hub.stop();
});

describe('console app shell', () => {
  it('boots from /whoami and renders the session bar with the full grant', async () => {
    const root = document.createElement('div');
    const app = new ConsoleApp(new HubClient(hub.baseUrl, 'amy'), root);
    await app.start();
    expect(root.querySelector('.session-principal')!.textContent).toBe('amy');
    const tokens = Array.from(root.querySelectorAll('.token-option')).map(
      (n) => n.textContent,
    );
    expect(tokens).toEqual(['LE', 'TF']);
    expect(app.session.selected).toEqual(['LE', 'TF']);
  });

  it('shows the plan board and gate checklist once a plan exists', async () => {
    const client = new HubClient(hub.baseUrl, 'amy', ['LE', 'TF']);
    const plan = await client.createPlan('CASE-APP');
    await client.addGoal(plan.id, 'criminal-history', { subject: 'Nobody Real' });

    const root = document.createElement('div');
    const app = new ConsoleApp(new HubClient(hub.baseUrl, 'amy'), root);
    await app.start();
    app.session.activePlan = plan.id;
    await app.refresh();

    expect(root.querySelector('.plan-board')).not.toBeNull();
    expect(root.textContent).toContain('Nobody Real');
    // requirement executed on add: zero results still satisfy it
    expect(root.querySelector('[data-status="satisfied"]')).not.toBeNull();
    const checklist = root.querySelector('.gate-checklist')!;
    expect(checklist.querySelectorAll('[data-rule]')).toHaveLength(5);
    expect(checklist.querySelector('.gate-banner')!.getAttribute('data-open'))
      .toBe('false');
  });

  it('runs a keyword query and renders the results panel', async () => {
    const root = document.createElement('div');
    const app = new ConsoleApp(new HubClient(hub.baseUrl, 'amy'), root);
    await app.start();
    await app.runQuery('anything', false);
    expect(root.querySelector('.results-panel')).not.toBeNull();
  });
});
