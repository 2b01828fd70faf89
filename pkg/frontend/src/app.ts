/**
 * Application controller: session lifecycle, batch fetching, submission and
 * recovery.  Rendering subscribes via the change callback; the controller
 * never touches the DOM, so it is fully scriptable in tests.
 */

import { ApiClient, ApiError } from './api';
import type { Answer, StatusResponse } from './api';
import { BatchModel } from './state';

export type View = 'create' | 'label' | 'stopped';

export class LabelApp {
  sessionId: string | null = null;
  status: StatusResponse | null = null;
  batch: BatchModel | null = null;
  busy = false;
  error: string | null = null;

  private listeners: Array<() => void> = [];

  constructor(public api: ApiClient) {}

  onChange(listener: () => void): void {
    this.listeners.push(listener);
  }

  private notify(): void {
    for (const listener of this.listeners) listener();
  }

  get view(): View {
    if (!this.sessionId || !this.status) return 'create';
    return this.status.phase === 'stopped' ? 'stopped' : 'label';
  }

  async createSession(graphJson: string, config: Record<string, unknown>): Promise<void> {
    this.error = null;
    this.busy = true;
    this.notify();
    try {
      const graph = JSON.parse(graphJson);
      const created = await this.api.createSession(graph, config);
      this.sessionId = created.session_id;
      this.status = created.status;
      await this.loadBatch();
    } catch (err) {
      this.error = describe(err);
    } finally {
      this.busy = false;
      this.notify();
    }
  }

  async open(sessionId: string): Promise<void> {
    this.error = null;
    this.busy = true;
    this.notify();
    try {
      this.status = await this.api.getStatus(sessionId);
      this.sessionId = sessionId;
      if (this.status.phase !== 'stopped') {
        await this.loadBatch();
      }
    } catch (err) {
      this.error = describe(err);
    } finally {
      this.busy = false;
      this.notify();
    }
  }

  async refreshStatus(): Promise<void> {
    if (!this.sessionId) return;
    try {
      this.status = await this.api.getStatus(this.sessionId);
      this.notify();
    } catch (err) {
      this.error = describe(err);
      this.notify();
    }
  }

  async loadBatch(): Promise<void> {
    if (!this.sessionId) return;
    const fresh = await this.api.getQueries(this.sessionId);
    this.batch = this.batch ? this.batch.refill(fresh) : new BatchModel(fresh);
    this.notify();
  }

  answer(edgeId: number, value: Answer): void {
    this.batch?.setAnswer(edgeId, value);
    this.notify();
  }

  answerCurrent(value: Answer): void {
    this.batch?.answerCurrent(value);
    this.notify();
  }

  move(step: number): void {
    this.batch?.move(step);
    this.notify();
  }

  focusCard(index: number): void {
    if (this.batch) {
      this.batch.cursor = Math.max(0, Math.min(this.batch.size - 1, index));
      this.notify();
    }
  }

  /**
   * Submit the completed batch.  A stale token (409) reloads the current
   * batch and keeps matching answers; network failures keep all client
   * state so a retry loses nothing.
   */
  async submit(): Promise<void> {
    if (!this.sessionId || !this.batch || !this.batch.complete || this.busy) return;
    this.busy = true;
    this.error = null;
    this.notify();
    try {
      this.status = await this.api.submitLabels(
        this.sessionId, this.batch.token, this.batch.payload(),
      );
      this.batch = null;
      if (this.status.phase !== 'stopped') {
        await this.loadBatch();
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        try {
          await this.loadBatch();  // refill keeps matching answers
          this.error = 'batch was out of date; answers restored, please resubmit';
        } catch (reloadErr) {
          this.error = describe(reloadErr);
        }
      } else {
        this.error = describe(err);
      }
    } finally {
      this.busy = false;
      this.notify();
    }
  }

  async finalize(): Promise<void> {
    if (!this.sessionId) return;
    this.busy = true;
    this.notify();
    try {
      await this.api.finalize(this.sessionId);
      await this.refreshStatus();
    } catch (err) {
      this.error = describe(err);
    } finally {
      this.busy = false;
      this.notify();
    }
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) return `server error ${err.status}: ${err.message}`;
  if (err instanceof Error) return err.message;
  return String(err);
}
