/**
 * Typed client for the boundary-labeling session service.
 * All algorithmic numbers shown in the UI come from these payloads;
 * nothing is computed client-side.
 */

export type Answer = 1 | -1;

export interface QueryCard {
  edge_id: number;
  u: number;
  v: number;
  size_u: number;
  size_v: number;
  features: number[];
  features_standardized: number[];
  clf_confidence: number;
  prop_estimate: number | null;
  score: number;
}

export interface QueriesResponse {
  session_id: string;
  round: number;
  batch_token: string;
  batch_size: number;
  is_seed_batch: boolean;
  queries: QueryCard[];
}

export interface TraceRow {
  round: number;
  labels_used: number;
  clf_query_err: number | null;
  prop_query_err: number | null;
  mutual_excl_err: number | null;
  pool_accuracy: number | null;
}

export interface StatusResponse {
  session_id: string;
  phase: 'awaiting_labels' | 'computing' | 'stopped';
  strategy: string;
  round: number;
  labels_used: number;
  budget: number;
  seed_size: number;
  pool_size: number;
  stop_reason: string | null;
  stopping_phase: boolean;
  created_at: number;
  updated_at: number;
  trace: TraceRow[];
}

export interface SessionCreated {
  session_id: string;
  status: StatusResponse;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
    this.name = 'ApiError';
  }
}

async function parseError(response: Response): Promise<never> {
  let detail = response.statusText;
  try {
    const body = await response.json();
    if (typeof body.detail === 'string') detail = body.detail;
    else if (body.detail) detail = JSON.stringify(body.detail);
  } catch {
    // non-JSON error body; keep the status text
  }
  throw new ApiError(response.status, detail);
}

export class ApiClient {
  constructor(public baseUrl: string = '') {}

  private async get<T>(path: string): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`);
    if (!response.ok) await parseError(response);
    return response.json() as Promise<T>;
  }

  private async post<T>(path: string, body: unknown): Promise<T> {
    const response = await fetch(`${this.baseUrl}${path}`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!response.ok) await parseError(response);
    return response.json() as Promise<T>;
  }

  createSession(graph: unknown, config: unknown): Promise<SessionCreated> {
    return this.post('/sessions', { graph, config });
  }

  getStatus(sessionId: string): Promise<StatusResponse> {
    return this.get(`/sessions/${sessionId}/status`);
  }

  getQueries(sessionId: string): Promise<QueriesResponse> {
    return this.get(`/sessions/${sessionId}/queries`);
  }

  submitLabels(
    sessionId: string,
    batchToken: string,
    answers: Record<string, Answer>,
  ): Promise<StatusResponse> {
    return this.post(`/sessions/${sessionId}/labels`, {
      batch_token: batchToken,
      answers,
    });
  }

  finalize(sessionId: string): Promise<{ session_id: string; model: unknown }> {
    return this.post(`/sessions/${sessionId}/finalize`, {});
  }

  modelUrl(sessionId: string): string {
    return `${this.baseUrl}/sessions/${sessionId}/model`;
  }
}
