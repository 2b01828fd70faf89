/**
 * Entry point: mounts the labeling app, wires delegated events, keyboard
 * shortcuts and status polling.
 */

import { ApiClient } from './api';
import type { Answer } from './api';
import { LabelApp } from './app';
import { bindKeyboard } from './keyboard';
import { render } from './render';

const POLL_MS = 4000;

export function initApp(root: HTMLElement, api: ApiClient, doc: Document = document): LabelApp {
  const app = new LabelApp(api);

  const redraw = () => {
    root.innerHTML = render(app);
  };
  app.onChange(redraw);

  root.addEventListener('click', (event) => {
    const target = (event.target as HTMLElement).closest('[data-action], [data-card-index]');
    if (!target) return;
    const action = target.getAttribute('data-action');
    if (action === 'create') {
      const graphJson = (root.querySelector('#graph-json') as HTMLTextAreaElement).value;
      const budgetRaw = (root.querySelector('#cfg-budget') as HTMLInputElement).value;
      const config = {
        rng_seed: Number((root.querySelector('#cfg-seed') as HTMLInputElement).value || 0),
        batch_size: Number((root.querySelector('#cfg-batch') as HTMLInputElement).value || 10),
        strategy: (root.querySelector('#cfg-strategy') as HTMLSelectElement).value,
        ...(budgetRaw ? { budget: Number(budgetRaw) } : {}),
      };
      void app.createSession(graphJson, config);
    } else if (action === 'open') {
      const sessionId = (root.querySelector('#open-id') as HTMLInputElement).value.trim();
      if (sessionId) void app.open(sessionId);
    } else if (action === 'answer') {
      const edgeId = Number(target.getAttribute('data-edge-id'));
      const value = Number(target.getAttribute('data-value')) as Answer;
      const index = app.batch?.cards.findIndex((c) => c.edge_id === edgeId) ?? -1;
      if (index >= 0) app.focusCard(index);
      app.answer(edgeId, value);
      app.move(1);
    } else if (action === 'submit') {
      void app.submit();
    } else if (target.hasAttribute('data-card-index')) {
      app.focusCard(Number(target.getAttribute('data-card-index')));
    }
  });

  bindKeyboard(doc, {
    answer: (value) => app.answerCurrent(value),
    move: (step) => app.move(step),
    submit: () => void app.submit(),
  });

  const poll = () => {
    if (app.view !== 'create') void app.refreshStatus();
  };
  const timer = setInterval(poll, POLL_MS);
  doc.defaultView?.addEventListener('beforeunload', () => clearInterval(timer));

  redraw();
  console.log('boundary labeling UI ready');
  return app;
}

declare global {
  interface Window {
    __labelApp?: LabelApp;
  }
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  const params = new URLSearchParams(window.location.search);
  const base = params.get('api') ?? '';
  const app = initApp(document.getElementById('app') as HTMLElement, new ApiClient(base));
  const sessionId = params.get('session');
  if (sessionId) void app.open(sessionId);
  window.__labelApp = app;
}
