/** Thin typed client for the documented /v1 endpoints. */

import type {
  ModelEntry,
  QueryResponse,
  TranscriptDoc,
  WhatIfResponse,
} from "./types.js";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly kind: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`, init);
    } catch (err) {
      throw new ApiError(0, "NetworkError", String(err));
    }
    const body = await response.json().catch(() => null);
    if (!response.ok) {
      const error = body?.error ?? { kind: "HTTPError", message: response.statusText };
      throw new ApiError(response.status, error.kind, error.message);
    }
    return body as T;
  }

  getTrace(episodeId: string): Promise<TranscriptDoc> {
    return this.request(`/v1/trace/${episodeId}?format=json`);
  }

  async getEpisodeModel(episodeId: string): Promise<ModelEntry> {
    const body = await this.request<{ models: ModelEntry[] }>(
      `/v1/models?episode_id=${episodeId}&include=doc`,
    );
    const entry = body.models[0];
    if (!entry) {
      throw new ApiError(404, "UnknownModel", "episode has no stored model");
    }
    return entry;
  }

  query(body: Record<string, unknown>): Promise<QueryResponse> {
    return this.request("/v1/query", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  whatIf(episodeId: string, modifications: Record<string, unknown>): Promise<WhatIfResponse> {
    return this.request("/v1/whatif", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ episode_id: episodeId, modifications }),
    });
  }

  healthz(): Promise<{ status: string }> {
    return this.request("/v1/healthz");
  }
}
