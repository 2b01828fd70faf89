/**
 * Client-side batch answering state.
 *
 * Holds the pending batch, the answers entered so far and the card cursor.
 * The server owns all algorithmic state; this model only guards the
 * submission invariant (every card answered) and preserves entered answers
 * across reloads and stale-token recoveries.
 */

import type { Answer, QueriesResponse, QueryCard } from './api';

export class BatchModel {
  round: number;
  token: string;
  isSeed: boolean;
  cards: QueryCard[];
  answers: Map<number, Answer>;
  cursor: number;

  constructor(batch: QueriesResponse) {
    this.round = batch.round;
    this.token = batch.batch_token;
    this.isSeed = batch.is_seed_batch;
    this.cards = batch.queries;
    this.answers = new Map();
    this.cursor = 0;
  }

  get size(): number {
    return this.cards.length;
  }

  get answeredCount(): number {
    return this.answers.size;
  }

  get complete(): boolean {
    return this.cards.every((c) => this.answers.has(c.edge_id));
  }

  currentCard(): QueryCard | undefined {
    return this.cards[this.cursor];
  }

  setAnswer(edgeId: number, answer: Answer): void {
    if (!this.cards.some((c) => c.edge_id === edgeId)) return;
    this.answers.set(edgeId, answer);
  }

  /** Answer the focused card and move to the next unanswered one. */
  answerCurrent(answer: Answer): void {
    const card = this.currentCard();
    if (!card) return;
    this.answers.set(card.edge_id, answer);
    this.advance();
  }

  advance(): void {
    const next = this.cards.findIndex(
      (c, i) => i > this.cursor && !this.answers.has(c.edge_id),
    );
    if (next >= 0) {
      this.cursor = next;
      return;
    }
    const any = this.cards.findIndex((c) => !this.answers.has(c.edge_id));
    this.cursor = any >= 0 ? any : Math.min(this.cursor + 1, this.size - 1);
  }

  move(step: number): void {
    const target = this.cursor + step;
    this.cursor = Math.max(0, Math.min(this.size - 1, target));
  }

  /** Payload for POST /labels; only valid when complete. */
  payload(): Record<string, Answer> {
    const out: Record<string, Answer> = {};
    for (const card of this.cards) {
      const answer = this.answers.get(card.edge_id);
      if (answer !== undefined) out[String(card.edge_id)] = answer;
    }
    return out;
  }

  /**
   * Adopt a freshly fetched batch while keeping answers for edges that are
   * still present (stale-token recovery, page reload, network retry).
   */
  refill(batch: QueriesResponse): BatchModel {
    const fresh = new BatchModel(batch);
    for (const card of fresh.cards) {
      const kept = this.answers.get(card.edge_id);
      if (kept !== undefined) fresh.answers.set(card.edge_id, kept);
    }
    fresh.cursor = Math.min(this.cursor, fresh.size - 1);
    return fresh;
  }
}
