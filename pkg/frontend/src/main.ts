import { HubClient } from './api.js';
import { ConsoleApp } from './app.js';

const params = new URLSearchParams(window.location.search);
const base = params.get('node') ?? 'http://127.0.0.1:8700';
const principal = params.get('principal') ?? 'amy';

const root = document.getElementById('app');
if (!root) throw new Error('missing #app mount point');

const app = new ConsoleApp(new HubClient(base, principal), root);
app.start().catch((err) => {
  root.textContent = `cannot reach node at ${base}: ${err}`;
});
