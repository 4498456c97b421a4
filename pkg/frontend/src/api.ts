/** Typed client for the search engine's JSON endpoints. */

export interface DatasetInfo {
  name: string;
  n: number;
  d_prime: number;
}

export interface ResultItem {
  id: number;
  uri: string;
  score: number;
}

export interface SearchStats {
  query_ms: number;
  n_results: number;
  k: number;
}

export interface FinetuneStats {
  train_ms: number;
  query_ms: number;
  n_candidates: number;
  n_positives: number;
  model_kind: string;
  iteration: number;
  n_negatives_sampled: number;
}

export interface SearchResponse {
  results: ResultItem[];
  stats: SearchStats;
}

export interface FinetuneRequest {
  dataset: string;
  session_id?: string;
  labels: { id: number; label: "pos" | "neg" }[];
  model: string;
  negative_samples: number;
  negative_weight: number;
}

export interface FinetuneResponse {
  session_id: string;
  results: ResultItem[];
  stats: FinetuneStats;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail =
      typeof body.detail === "string" ? body.detail : `request failed (${resp.status})`;
    throw new ApiError(resp.status, detail);
  }
  return body as T;
}

export class ApiClient {
  constructor(private baseUrl: string = "") {}

  datasets(): Promise<DatasetInfo[]> {
    return request<DatasetInfo[]>(`${this.baseUrl}/datasets`);
  }

  searchText(dataset: string, text: string, k: number): Promise<SearchResponse> {
    return request<SearchResponse>(`${this.baseUrl}/search`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ dataset, query: { text }, k }),
    });
  }

  finetune(req: FinetuneRequest): Promise<FinetuneResponse> {
    return request<FinetuneResponse>(`${this.baseUrl}/finetune`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
  }

  imageUrl(dataset: string, id: number): string {
    return `${this.baseUrl}/image/${encodeURIComponent(dataset)}/${id}`;
  }
}
