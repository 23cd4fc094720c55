import type { UvRect } from "./brush.js";

export interface SessionSchema {
  expression: number;
  eyes: [number, number];
  t_tex: number;
  lighting: number;
}

export interface SessionInfo {
  id: string;
  revision: number;
  size: number;
  schema: SessionSchema;
}

export interface OrbitSpec {
  target: [number, number, number];
  distance: number;
  yaw?: number;
  pitch?: number;
  fx?: number;
}

export interface ParamPatch {
  expression?: number[];
  jaw?: number;
  eyes?: number[] | number[][];
  camera?: { orbit: OrbitSpec };
  lighting?: number[];
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly diagnostic?: string,
  ) {
    super(message);
  }
}

export interface Client {
  listBundles(): Promise<string[]>;
  openSession(bundle: string, size?: number): Promise<SessionInfo>;
  resumeRevision(id: string): Promise<number>;
  patchParams(id: string, patch: ParamPatch): Promise<number>;
  postTexture(id: string, rect: UvRect, png: Blob | Uint8Array): Promise<number>;
  postHair(id: string, bundle: string): Promise<number>;
  frameUrl(id: string): string;
  exportPlyUrl(id: string): string;
  liveUrl(id: string): string;
}

/** Thin typed wrapper over the session endpoints; every mutation resolves
 * to the new revision. */
export function createClient(
  baseUrl: string,
  fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
): Client {
  const base = baseUrl.replace(/\/$/, "");

  async function request<T>(path: string, init: RequestInit): Promise<T> {
    const resp = await fetchFn(`${base}${path}`, init);
    if (!resp.ok) {
      let message = `${init.method ?? "GET"} ${path} failed (${resp.status})`;
      let diagnostic: string | undefined;
      try {
        const body = (await resp.json()) as { error?: string; diagnostic?: string };
        if (body.error) message = body.error;
        diagnostic = body.diagnostic;
      } catch {
        // non-JSON error body; keep the generic message
      }
      throw new ApiError(message, resp.status, diagnostic);
    }
    return (await resp.json()) as T;
  }

  return {
    async listBundles() {
      const body = await request<{ bundles: string[] }>("/bundles", { method: "GET" });
      return body.bundles;
    },

    openSession(bundle, size = 512) {
      return request<SessionInfo>("/sessions", {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ bundle, size }),
      });
    },

    /** Probe an existing session (page reload); resolves its revision. */
    async resumeRevision(id) {
      const resp = await fetchFn(`${base}/sessions/${id}/frame`, { method: "GET" });
      if (!resp.ok) throw new ApiError(`session ${id} is gone`, resp.status);
      return Number(resp.headers.get("x-revision") ?? 0);
    },

    async patchParams(id, patch) {
      const body = await request<{ revision: number }>(`/sessions/${id}/params`, {
        method: "PATCH",
        headers: { "content-type": "application/json" },
        body: JSON.stringify(patch),
      });
      return body.revision;
    },

    async postTexture(id, rect, png) {
      const [u0, v0, u1, v1] = rect;
      const query = new URLSearchParams({
        u0: String(u0),
        v0: String(v0),
        u1: String(u1),
        v1: String(v1),
      });
      const body = await request<{ revision: number }>(
        `/sessions/${id}/texture?${query}`,
        {
          method: "POST",
          headers: { "content-type": "image/png" },
          body: png instanceof Uint8Array ? new Blob([png.slice()]) : png,
        },
      );
      return body.revision;
    },

    async postHair(id, bundle) {
      const body = await request<{ revision: number }>(`/sessions/${id}/hair`, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ bundle }),
      });
      return body.revision;
    },

    frameUrl: (id) => `${base}/sessions/${id}/frame`,
    exportPlyUrl: (id) => `${base}/sessions/${id}/export.ply`,
    liveUrl: (id) =>
      `${base.replace(/^http/, "ws")}/sessions/${id}/live`,
  };
}
