/**
 * HTTP client for the workbench gateway.
 *
 * Every call sends the bearer token, parses the JSON body, and converts the
 * gateway's error envelope `{"error": {code, message, ...}}` into a thrown
 * GatewayError carrying the structured fields (rule id for denials, offset
 * and expected-token list for criterion parse errors, and so on).
 */

/** Route prefix shared by every gateway endpoint. */
export const API_PREFIX = "/api/v1";

// ---------------------------------------------------------------------------
// errors
// ---------------------------------------------------------------------------

/** A non-2xx gateway response, with the envelope fields lifted out. */
export class GatewayError extends Error {
  readonly code: string;
  readonly status: number;
  readonly field?: string;
  readonly rule?: string;
  readonly offset?: number;
  readonly expected?: string[];

  constructor(status: number, envelope: Record<string, unknown>) {
    const message =
      typeof envelope.message === "string" ? envelope.message : `HTTP ${status}`;
    super(message);
    this.name = "GatewayError";
    this.status = status;
    this.code = typeof envelope.code === "string" ? envelope.code : "unknown";
    if (typeof envelope.field === "string") this.field = envelope.field;
    if (typeof envelope.rule === "string") this.rule = envelope.rule;
    if (typeof envelope.offset === "number") this.offset = envelope.offset;
    if (Array.isArray(envelope.expected)) {
      this.expected = envelope.expected.filter(
        (item): item is string => typeof item === "string",
      );
    }
  }
}

// ---------------------------------------------------------------------------
// response shapes
// ---------------------------------------------------------------------------

export type RunState = "queued" | "running" | "done" | "failed";

export interface RunStatusDoc {
  run_id: string;
  status: RunState;
  seed: number;
  submitted_at?: string;
  error?: string;
  [key: string]: unknown;
}

export interface RunAcceptedDoc {
  run_id: string;
  status: string;
  [key: string]: unknown;
}

type FetchLike = (
  url: string,
  init: {
    method: string;
    headers: Record<string, string>;
    body?: string;
  },
) => Promise<{ status: number; text(): Promise<string> }>;

export interface GatewayClientOptions {
  /** Origin of the gateway, e.g. "http://localhost:8080". */
  baseUrl: string;
  token: string;
  /** Injectable for tests; defaults to the global fetch. */
  fetchImpl?: FetchLike;
}

export interface PollOptions {
  /** First wait between status checks; grows by `backoff` up to the cap. */
  intervalMs?: number;
  backoff?: number;
  maxIntervalMs?: number;
  /** Give up (reject) after this long without a terminal status. */
  timeoutMs?: number;
  /** Injectable for tests; defaults to a real setTimeout sleep. */
  sleep?: (ms: number) => Promise<void>;
}

const realSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

const q = encodeURIComponent;

// ---------------------------------------------------------------------------
// client
// ---------------------------------------------------------------------------

export class GatewayClient {
  private readonly baseUrl: string;
  private readonly token: string;
  private readonly fetchImpl: FetchLike;

  constructor(options: GatewayClientOptions) {
    this.baseUrl = options.baseUrl.replace(/\/+$/, "") + API_PREFIX;
    this.token = options.token;
    this.fetchImpl = options.fetchImpl ?? (fetch as unknown as FetchLike);
  }

  private async request(
    method: string,
    path: string,
    body?: unknown,
    contentType = "application/json",
  ): Promise<unknown> {
    const headers: Record<string, string> = {
      Authorization: `Bearer ${this.token}`,
    };
    let payload: string | undefined;
    if (body !== undefined) {
      headers["Content-Type"] = contentType;
      payload = typeof body === "string" ? body : JSON.stringify(body);
    }
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers,
      ...(payload !== undefined ? { body: payload } : {}),
    });
    const text = await response.text();
    const doc: unknown = text.length > 0 ? JSON.parse(text) : null;
    if (response.status >= 400) {
      const envelope =
        doc !== null &&
        typeof doc === "object" &&
        "error" in (doc as Record<string, unknown>)
          ? ((doc as Record<string, unknown>).error as Record<string, unknown>)
          : {};
      throw new GatewayError(response.status, envelope ?? {});
    }
    return doc;
  }

  // -- catalog --------------------------------------------------------------

  /** All registered transforms, optionally narrowed to "ingest" or "analytic". */
  listFunctions(kind?: "ingest" | "analytic", name?: string): Promise<unknown> {
    const parts = [];
    if (kind) parts.push(`kind=${q(kind)}`);
    if (name) parts.push(`name=${q(name)}`);
    const query = parts.length > 0 ? `?${parts.join("&")}` : "";
    return this.request("GET", `/functions${query}`);
  }

  listDatasets(name?: string): Promise<unknown> {
    const query = name ? `?name=${q(name)}` : "";
    return this.request("GET", `/datasets${query}`);
  }

  registerFunction(doc: unknown): Promise<unknown> {
    return this.request("POST", "/functions", doc);
  }

  registerDataset(doc: unknown): Promise<unknown> {
    return this.request("POST", "/datasets", doc);
  }

  deleteArtifact(artifactId: string): Promise<unknown> {
    return this.request("DELETE", `/artifacts/${q(artifactId)}`);
  }

  // -- records --------------------------------------------------------------

  /** Body is newline-delimited JSON, one record per line. */
  ingest(datasetId: string, ndjson: string): Promise<unknown> {
    return this.request(
      "POST",
      `/datasets/${q(datasetId)}/ingest`,
      ndjson,
      "application/x-ndjson",
    );
  }

  pushRecord(datasetId: string, record: unknown): Promise<unknown> {
    return this.request("POST", `/datasets/${q(datasetId)}/records`, record);
  }

  findRecords(datasetId: string, field: string, value: string): Promise<unknown> {
    return this.request(
      "GET",
      `/datasets/${q(datasetId)}/records?field=${q(field)}&value=${q(value)}`,
    );
  }

  eraseSubject(
    datasetId: string,
    field: string,
    value: string,
    mode: "delete" | "redact" = "delete",
  ): Promise<unknown> {
    return this.request(
      "DELETE",
      `/datasets/${q(datasetId)}/subject?field=${q(field)}&value=${q(value)}&mode=${q(mode)}`,
    );
  }

  enforceRetention(): Promise<unknown> {
    return this.request("POST", "/retention/enforce", {});
  }

  applyAnalytic(
    functionId: string,
    datasetId: string,
    params?: Record<string, unknown>,
  ): Promise<unknown> {
    return this.request(
      "POST",
      `/analytics/${q(functionId)}/apply?dataset=${q(datasetId)}`,
      { params: params ?? {} },
    );
  }

  // -- policy runs ----------------------------------------------------------

  submitRun(tree: unknown, seed = 0): Promise<RunAcceptedDoc> {
    return this.request("POST", "/policies/runs", {
      tree,
      seed,
    }) as Promise<RunAcceptedDoc>;
  }

  runStatus(runId: string): Promise<RunStatusDoc> {
    return this.request("GET", `/policies/runs/${q(runId)}`) as Promise<RunStatusDoc>;
  }

  runResults(runId: string): Promise<unknown> {
    return this.request("GET", `/policies/runs/${q(runId)}/results`);
  }

  runRanking(runId: string): Promise<unknown> {
    return this.request("GET", `/policies/runs/${q(runId)}/ranking`);
  }

  /**
   * Poll a run until it reaches a terminal state. Waits grow geometrically
   * (1s, 1.5s, 2.25s, ... capped at 10s by default) so a long simulation
   * does not get hammered. A failed run rejects with the server's diagnostic.
   */
  async pollRun(runId: string, options: PollOptions = {}): Promise<RunStatusDoc> {
    const {
      intervalMs = 1000,
      backoff = 1.5,
      maxIntervalMs = 10_000,
      timeoutMs,
      sleep = realSleep,
    } = options;
    let wait = intervalMs;
    let waited = 0;
    for (;;) {
      const status = await this.runStatus(runId);
      if (status.status === "done") return status;
      if (status.status === "failed") {
        throw new Error(
          `run ${runId} failed: ${status.error ?? "no diagnostic reported"}`,
        );
      }
      if (timeoutMs !== undefined && waited >= timeoutMs) {
        throw new Error(`run ${runId} still ${status.status} after ${waited}ms`);
      }
      await sleep(wait);
      waited += wait;
      wait = Math.min(wait * backoff, maxIntervalMs);
    }
  }
}

// ---------------------------------------------------------------------------
// mutation gate
// ---------------------------------------------------------------------------

/**
 * Serializes mutations per view: at most one in flight. A second call while
 * the first is pending rejects immediately instead of queueing, so a double
 * click cannot submit twice.
 */
export class MutationGate {
  private busy = false;

  get inFlight(): boolean {
    return this.busy;
  }

  async run<T>(action: () => Promise<T>): Promise<T> {
    if (this.busy) {
      throw new Error("another change is still being applied");
    }
    this.busy = true;
    try {
      return await action();
    } finally {
      this.busy = false;
    }
  }
}
