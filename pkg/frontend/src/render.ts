/**
 * DOM rendering for the three views.  Pure string templates plus a single
 * delegated click handler wired in main.ts; all state lives in LabelApp.
 */

import type { LabelApp } from './app';
import { featureBars, mutualErrorChart, queryErrorChart } from './charts';
import type { QueryCard } from './api';

function esc(text: string): string {
  return text.replace(/[&<>"]/g, (c) => (
    { '&': '&amp;', '<': '&lt;', '>': '&gt;', '"': '&quot;' }[c] as string
  ));
}

function fmt(value: number | null, digits = 3): string {
  return value === null ? '–' : value.toFixed(digits);
}

export function renderCreateView(app: LabelApp): string {
  return `
  <section class="create-view">
    <h1>Boundary labeling</h1>
    <p>Paste a region graph (JSON with feature_dim, nodes, edges) and start
       an interactive training session, or open an existing one.</p>
    ${app.error ? `<div class="error" data-role="error">${esc(app.error)}</div>` : ''}
    <label>Graph JSON
      <textarea id="graph-json" rows="8" placeholder='{"feature_dim": ..., "nodes": [...], "edges": [...]}'></textarea>
    </label>
    <div class="config-row">
      <label>Seed <input id="cfg-seed" type="number" value="0"></label>
      <label>Batch size <input id="cfg-batch" type="number" value="10"></label>
      <label>Budget <input id="cfg-budget" type="number" placeholder="auto"></label>
      <label>Strategy
        <select id="cfg-strategy">
          <option value="proposed" selected>proposed</option>
          <option value="uncertain">uncertain</option>
          <option value="random">random</option>
          <option value="cotrain">cotrain</option>
          <option value="iwal">iwal</option>
        </select>
      </label>
    </div>
    <button id="create-btn" data-action="create" ${app.busy ? 'disabled' : ''}>Create session</button>
    <div class="open-row">
      <input id="open-id" placeholder="session id">
      <button data-action="open">Open</button>
    </div>
  </section>`;
}

function renderCard(app: LabelApp, card: QueryCard, index: number): string {
  const batch = app.batch!;
  const answer = batch.answers.get(card.edge_id);
  const focused = index === batch.cursor;
  const yU = card.prop_estimate;
  return `
  <article class="card ${focused ? 'focused' : ''} ${answer !== undefined ? 'answered' : ''}"
           data-card-index="${index}" data-edge-id="${card.edge_id}">
    <header>
      <span class="edge-id">boundary #${card.edge_id}</span>
      <span class="endpoints">regions ${card.u} (${card.size_u}px) | ${card.v} (${card.size_v}px)</span>
    </header>
    <div class="evidence">${featureBars(card.features_standardized)}</div>
    <dl class="scores">
      <dt>classifier</dt><dd>${card.clf_confidence.toFixed(3)}</dd>
      <dt>propagation</dt><dd>${yU === null ? '–' : yU.toFixed(3)}</dd>
      <dt>disagreement</dt><dd>${card.score.toFixed(3)}</dd>
    </dl>
    <div class="answer-buttons">
      <button data-action="answer" data-edge-id="${card.edge_id}" data-value="1"
              class="${answer === 1 ? 'selected' : ''}">true boundary (t)</button>
      <button data-action="answer" data-edge-id="${card.edge_id}" data-value="-1"
              class="${answer === -1 ? 'selected' : ''}">false boundary (f)</button>
    </div>
  </article>`;
}

export function renderDashboard(app: LabelApp): string {
  const status = app.status!;
  const pct = status.budget > 0
    ? Math.round((100 * status.labels_used) / status.budget)
    : 0;
  const last = status.trace[status.trace.length - 1];
  return `
  <aside class="dashboard" data-role="dashboard">
    <h2>${esc(status.strategy)} session</h2>
    <div class="progress">
      <div class="progress-bar"><div class="progress-fill" style="width:${pct}%"></div></div>
      <span data-role="progress">${status.labels_used} / ${status.budget} labels (${pct}%)</span>
    </div>
    ${status.stopping_phase ? '<div class="stopping" data-role="stopping">query error reached zero — stopping phase</div>' : ''}
    <h3>query-set errors</h3>
    ${queryErrorChart(status.trace)}
    <h3>mutually exclusive errors</h3>
    ${mutualErrorChart(status.trace)}
    <dl class="stats">
      <dt>round</dt><dd>${status.round}</dd>
      <dt>pool</dt><dd>${status.pool_size}</dd>
      <dt>pool accuracy</dt><dd>${last ? fmt(last.pool_accuracy) : '–'}</dd>
    </dl>
  </aside>`;
}

export function renderLabelView(app: LabelApp): string {
  const batch = app.batch;
  if (!batch) {
    return `<section class="label-view"><p>loading batch…</p></section>`;
  }
  const cards = batch.cards.map((c, i) => renderCard(app, c, i)).join('');
  return `
  <section class="label-view">
    ${app.error ? `<div class="error" data-role="error">${esc(app.error)}</div>` : ''}
    <header class="batch-header">
      <h1>${batch.isSeed ? 'Seed batch' : `Round ${batch.round}`}</h1>
      <span data-role="answered">${batch.answeredCount} / ${batch.size} answered</span>
      <button id="submit-btn" data-action="submit"
              ${batch.complete && !app.busy ? '' : 'disabled'}>submit batch</button>
    </header>
    <div class="cards">${cards}</div>
    ${renderDashboard(app)}
  </section>`;
}

export function renderStoppedView(app: LabelApp): string {
  const status = app.status!;
  return `
  <section class="stopped-view">
    <div class="banner" data-role="stopped-banner">
      session stopped: ${esc(status.stop_reason ?? 'done')}
    </div>
    <p>${status.labels_used} boundaries labeled of a ${status.budget} budget.</p>
    <a id="model-link" href="${app.api.modelUrl(status.session_id)}" download="model.json">
      download final model
    </a>
    ${renderDashboard(app)}
  </section>`;
}

export function render(app: LabelApp): string {
  switch (app.view) {
    case 'create':
      return renderCreateView(app);
    case 'label':
      return renderLabelView(app);
    case 'stopped':
      return renderStoppedView(app);
  }
}
