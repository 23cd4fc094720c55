import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiError, type Client, type ParamPatch, type SessionInfo } from "../src/api.js";
import { createEditor, type Editor } from "../src/app.js";
import type { UvRect } from "../src/brush.js";
import { fakeSocketFactory } from "./fakes.js";

class MockBackend implements Client {
  revision = 0;
  opened = 0;
  patches: ParamPatch[] = [];
  textures: { rect: UvRect; bytes: Uint8Array }[] = [];
  hairSwaps: string[] = [];
  alive = new Set<string>();
  /** When set, the next patchParams stalls until this resolves. */
  patchHold: Promise<void> | null = null;

  async listBundles(): Promise<string[]> {
    return ["desk.egava", "donor.egava"];
  }

  async openSession(bundle: string, size = 512): Promise<SessionInfo> {
    this.opened += 1;
    const id = `sess-${this.opened}`;
    this.alive.add(id);
    return {
      id,
      revision: this.revision,
      size,
      schema: { expression: 4, eyes: [2, 2], t_tex: 256, lighting: 27 },
    };
  }

  async resumeRevision(id: string): Promise<number> {
    if (!this.alive.has(id)) throw new ApiError(`session ${id} is gone`, 404);
    return this.revision;
  }

  async patchParams(_id: string, patch: ParamPatch): Promise<number> {
    if (this.patchHold) {
      const hold = this.patchHold;
      this.patchHold = null;
      await hold;
    }
    this.patches.push(patch);
    return ++this.revision;
  }

  async postTexture(_id: string, rect: UvRect, png: Blob | Uint8Array): Promise<number> {
    const bytes =
      png instanceof Uint8Array ? png : new Uint8Array(await (png as Blob).arrayBuffer());
    this.textures.push({ rect, bytes });
    return ++this.revision;
  }

  async postHair(_id: string, bundle: string): Promise<number> {
    this.hairSwaps.push(bundle);
    return ++this.revision;
  }

  frameUrl = (id: string) => `http://svc/sessions/${id}/frame`;
  exportPlyUrl = (id: string) => `http://svc/sessions/${id}/export.ply`;
  liveUrl = (id: string) => `ws://svc/sessions/${id}/live`;
}

/** jsdom's File lacks arrayBuffer(); every real browser has it, so stub it. */
function makeFile(bytes: number[]): File {
  const file = new File([new Uint8Array(bytes)], "patch.png", { type: "image/png" });
  Object.defineProperty(file, "arrayBuffer", {
    value: async () => new Uint8Array(bytes).buffer,
    configurable: true,
  });
  return file;
}

function fakeStorage(): Pick<Storage, "getItem" | "setItem" | "removeItem"> {
  const map = new Map<string, string>();
  return {
    getItem: (k) => map.get(k) ?? null,
    setItem: (k, v) => void map.set(k, v),
    removeItem: (k) => void map.delete(k),
  };
}

function slider(label: string): HTMLInputElement {
  const el = document.querySelector<HTMLInputElement>(`input[data-control="${label}"]`);
  if (!el) throw new Error(`no slider labeled ${label}`);
  return el;
}

function drag(label: string, ...values: number[]): void {
  const input = slider(label);
  for (const v of values) {
    input.value = String(v);
    input.dispatchEvent(new Event("input"));
  }
}

function badgeNumber(): number {
  const text = document.querySelector("#revision-badge")?.textContent ?? "";
  const match = /rev (\d+)/.exec(text);
  if (!match) throw new Error(`unreadable badge "${text}"`);
  return Number(match[1]);
}

async function settle(editor: Editor): Promise<void> {
  vi.advanceTimersByTime(30);
  await editor.idle();
}

describe("editor app", () => {
  let backend: MockBackend;
  let editor: Editor | null;

  beforeEach(() => {
    vi.useFakeTimers();
    backend = new MockBackend();
    editor = null;
    document.body.innerHTML = '<div id="app"></div>';
  });
  afterEach(() => {
    editor?.close();
    vi.useRealTimers();
  });

  function boot(overrides: Record<string, unknown> = {}): Promise<Editor> {
    return createEditor({
      client: backend,
      doc: document,
      root: document.getElementById("app")!,
      bundle: "desk.egava",
      size: 128,
      ...overrides,
    });
  }

  it("a jaw drag from 0 to 0.3 issues exactly one debounced PATCH {jaw: 0.3}", async () => {
    editor = await boot();
    drag("jaw", 0.1, 0.2, 0.3);
    expect(backend.patches).toEqual([]); // still inside the debounce window
    await settle(editor);
    expect(backend.patches).toEqual([{ jaw: 0.3 }]);
  });

  it("builds the control panel from the session schema", async () => {
    editor = await boot();
    for (let i = 0; i < 4; i++) expect(slider(`expression ${i}`)).toBeTruthy();
    expect(slider("left eye pitch")).toBeTruthy();
    expect(slider("camera distance")).toBeTruthy();
    const hairOptions = document.querySelectorAll("#hair-bundle option");
    expect([...hairOptions].map((o) => (o as HTMLOptionElement).value)).toEqual([
      "desk.egava",
      "donor.egava",
    ]);
  });

  it("revision badge strictly increases over a scripted 20-action session", async () => {
    editor = await boot();
    const file = makeFile([9, 8, 7]);
    const patchInput = document.querySelector<HTMLInputElement>("#patch-file")!;
    Object.defineProperty(patchInput, "files", { value: [file], configurable: true });
    const preset = document.querySelector<HTMLSelectElement>("#lighting-preset")!;
    const raw = document.querySelector<HTMLTextAreaElement>("#lighting-raw")!;
    const frame = document.querySelector<HTMLImageElement>("#frame")!;
    const hairSelect = document.querySelector<HTMLSelectElement>("#hair-bundle")!;

    const actions: (() => void)[] = [
      () => drag("expression 0", 0.4),
      () => drag("expression 1", -0.2),
      () => drag("expression 2", 0.9),
      () => drag("expression 3", 0.1),
      () => drag("jaw", 0.35),
      () => drag("left eye yaw", 0.2),
      () => drag("left eye pitch", -0.1),
      () => drag("right eye yaw", -0.2),
      () => drag("right eye pitch", 0.1),
      () => drag("camera yaw", 20),
      () => drag("camera pitch", -10),
      () => drag("camera distance", 1.1),
      () => {
        preset.value = "frontal";
        preset.dispatchEvent(new Event("change"));
      },
      () => {
        raw.value = Array.from({ length: 27 }, (_, i) => (i === 0 ? "1.2" : "0")).join(" ");
        document.querySelector<HTMLButtonElement>("#lighting-apply")!.click();
      },
      () => {
        hairSelect.value = "donor.egava";
        document.querySelector<HTMLButtonElement>("#hair-swap")!.click();
      },
      () => frame.dispatchEvent(new MouseEvent("click", { clientX: 64, clientY: 64 })),
      () => drag("jaw", 0.5),
      () => drag("expression 0", -0.4),
      () => drag("camera yaw", -15),
      () => {
        preset.value = "top-cool";
        preset.dispatchEvent(new Event("change"));
      },
    ];
    expect(actions).toHaveLength(20);

    const seen: number[] = [badgeNumber()];
    for (const act of actions) {
      act();
      await settle(editor);
      seen.push(badgeNumber());
    }
    for (let i = 1; i < seen.length; i++) {
      expect(seen[i]!).toBeGreaterThan(seen[i - 1]!);
    }
    expect(seen[0]).toBe(0);
    expect(seen[seen.length - 1]).toBe(20);
    expect(backend.revision).toBe(20);
  });

  it("canvas always shows the highest revision; keepalives change nothing", async () => {
    const { factory, sockets } = fakeSocketFactory();
    editor = await boot({ socketFactory: factory });
    const socket = sockets[0]!;
    socket.open();

    socket.push(1, new Uint8Array([1, 1]));
    socket.push(3, new Uint8Array([3, 3]));
    const frame = document.querySelector<HTMLImageElement>("#frame")!;
    expect(frame.dataset.revision).toBe("3");
    const src3 = frame.src;

    socket.push(2, new Uint8Array([2, 2])); // stale push loses
    expect(frame.dataset.revision).toBe("3");
    expect(frame.src).toBe(src3);

    socket.keepalive(3);
    expect(frame.dataset.revision).toBe("3");
    expect(badgeNumber()).toBe(3);
  });

  it("disables export while a mutation is in flight", async () => {
    editor = await boot();
    let release!: () => void;
    backend.patchHold = new Promise((r) => {
      release = r;
    });

    drag("jaw", 0.3);
    vi.advanceTimersByTime(30); // debounce fires, request now in flight
    const exportPly = document.querySelector<HTMLButtonElement>("#export-ply")!;
    expect(exportPly.disabled).toBe(true);

    release();
    await editor.idle();
    expect(exportPly.disabled).toBe(false);
    expect(badgeNumber()).toBe(1);
  });

  it("posts the texture patch for the clicked brush rectangle", async () => {
    editor = await boot();
    const file = makeFile([5, 6, 7, 8]);
    const patchInput = document.querySelector<HTMLInputElement>("#patch-file")!;
    Object.defineProperty(patchInput, "files", { value: [file], configurable: true });
    document.querySelector<HTMLSelectElement>("#brush-size")!.value = "64";

    const frame = document.querySelector<HTMLImageElement>("#frame")!;
    // size=128 canvas: (51.2, 38.4) -> uv (0.4, 0.3); 64 texels on a 256 atlas
    frame.dispatchEvent(new MouseEvent("click", { clientX: 51.2, clientY: 38.4 }));
    await editor.idle();

    expect(backend.textures).toHaveLength(1);
    const { rect, bytes } = backend.textures[0]!;
    expect(rect[0]).toBeCloseTo(0.4, 12);
    expect(rect[1]).toBeCloseTo(0.3, 12);
    expect(rect[2]).toBeCloseTo(0.4 + 64 / 256, 12);
    expect(rect[3]).toBeCloseTo(0.3 + 64 / 256, 12);
    expect(Array.from(bytes)).toEqual([5, 6, 7, 8]);
  });

  it("refuses to paint without a patch file", async () => {
    editor = await boot();
    document
      .querySelector<HTMLImageElement>("#frame")!
      .dispatchEvent(new MouseEvent("click", { clientX: 10, clientY: 10 }));
    await editor.idle();
    expect(backend.textures).toHaveLength(0);
    expect(document.querySelector("#status")!.textContent).toMatch(/patch PNG/);
  });

  it("rejects malformed raw lighting locally without a PATCH", async () => {
    editor = await boot();
    const raw = document.querySelector<HTMLTextAreaElement>("#lighting-raw")!;
    raw.value = "1 2 3";
    document.querySelector<HTMLButtonElement>("#lighting-apply")!.click();
    await editor.idle();
    expect(backend.patches).toEqual([]);
    expect(document.querySelector("#status")!.textContent).toMatch(/27/);
    expect(badgeNumber()).toBe(0);
  });

  it("shows the banner on connection loss and reconnects", async () => {
    const { factory, sockets } = fakeSocketFactory();
    editor = await boot({ socketFactory: factory, retryMs: 40 });
    const banner = document.querySelector<HTMLDivElement>("#banner")!;
    sockets[0]!.open();
    expect(banner.hidden).toBe(true);

    sockets[0]!.drop();
    expect(banner.hidden).toBe(false);

    vi.advanceTimersByTime(40);
    expect(sockets).toHaveLength(2);
    sockets[1]!.open();
    expect(banner.hidden).toBe(true);
    sockets[1]!.push(1, new Uint8Array([1]));
    expect(document.querySelector<HTMLImageElement>("#frame")!.dataset.revision).toBe("1");
  });

  it("a reload resumes the stored session and restores the controls", async () => {
    const storage = fakeStorage();
    editor = await boot({ storage });
    const firstId = editor.session.id;
    drag("jaw", 0.3);
    await settle(editor);
    drag("camera yaw", 25);
    await settle(editor);
    editor.close();

    document.body.innerHTML = '<div id="app"></div>';
    editor = await boot({ storage });
    expect(backend.opened).toBe(1); // resumed, not reopened
    expect(editor.session.id).toBe(firstId);
    expect(badgeNumber()).toBe(2);
    expect(slider("jaw").value).toBe("0.3");
    expect(slider("camera yaw").value).toBe("25");
  });

  it("opens a fresh session when the stored one is gone", async () => {
    const storage = fakeStorage();
    editor = await boot({ storage });
    const firstId = editor.session.id;
    editor.close();
    backend.alive.delete(firstId);

    document.body.innerHTML = '<div id="app"></div>';
    editor = await boot({ storage });
    expect(backend.opened).toBe(2);
    expect(editor.session.id).not.toBe(firstId);
  });
});
