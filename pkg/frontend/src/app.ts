/**
 * Editor shell: builds the control panel from the session schema, keeps a
 * local mirror of the edited parameters (persisted for reload/resume), and
 * funnels every mutation through one serialized queue so the server sees at
 * most one in-flight request.  The canvas is fed exclusively by the live
 * channel; a monotonic gate drops stale frames, a second gate drives the
 * revision badge from both mutation acks and pushed frames.
 */

import type { Client, ParamPatch, SessionInfo, SessionSchema } from "./api.js";
import { brushRect, canvasToUv } from "./brush.js";
import { makeSlider } from "./controls.js";
import { LIGHTING_PRESETS, parseRawLighting, presetNames } from "./lighting.js";
import { connectLive, type LiveChannel } from "./live.js";
import { createMutationQueue } from "./mutations.js";
import { createRevisionGate } from "./revision.js";

export interface ParamMirror {
  expression: number[];
  jaw: number;
  eyes: [[number, number], [number, number]];
  camera: { distance: number; yaw: number; pitch: number };
  lighting: number[] | null;
  lightingName: string;
}

interface StoredSession {
  id: string;
  size: number;
  schema: SessionSchema;
  params: ParamMirror;
}

export interface EditorOptions {
  client: Client;
  doc: Document;
  root: HTMLElement;
  bundle: string;
  size?: number;
  storage?: Pick<Storage, "getItem" | "setItem" | "removeItem">;
  socketFactory?: (url: string) => WebSocket;
  retryMs?: number;
}

export interface Editor {
  session: SessionInfo;
  /** Highest revision acknowledged by any channel. */
  badge(): number;
  /** Resolves once every submitted mutation has settled. */
  idle(): Promise<void>;
  close(): void;
}

function defaultMirror(schema: SessionSchema): ParamMirror {
  return {
    expression: new Array<number>(schema.expression).fill(0),
    jaw: 0,
    eyes: [
      [0, 0],
      [0, 0],
    ],
    camera: { distance: 0.8, yaw: 0, pitch: 0 },
    lighting: null,
    lightingName: "",
  };
}

function pngDataUrl(win: Window, png: Uint8Array): string {
  let binary = "";
  const chunk = 0x8000; // String.fromCharCode has an argument-count ceiling
  for (let i = 0; i < png.length; i += chunk) {
    binary += String.fromCharCode(...png.subarray(i, i + chunk));
  }
  return `data:image/png;base64,${win.btoa(binary)}`;
}

export async function createEditor(options: EditorOptions): Promise<Editor> {
  const { client, doc, root, bundle } = options;
  const win = doc.defaultView;
  if (!win) throw new Error("document is not attached to a window");
  const storageKey = `gausshead-editor:${bundle}`;

  // -- session: resume from storage when the old one is still alive
  let session: SessionInfo | null = null;
  let mirror: ParamMirror | null = null;
  const storedRaw = options.storage?.getItem(storageKey);
  if (storedRaw) {
    try {
      const stored = JSON.parse(storedRaw) as StoredSession;
      const revision = await client.resumeRevision(stored.id);
      session = { id: stored.id, revision, size: stored.size, schema: stored.schema };
      mirror = stored.params;
    } catch {
      options.storage?.removeItem(storageKey);
    }
  }
  if (!session) {
    session = await client.openSession(bundle, options.size ?? 512);
    mirror = defaultMirror(session.schema);
  }
  const live: SessionInfo = session;
  const state: ParamMirror = mirror ?? defaultMirror(session.schema);

  const persist = () => {
    options.storage?.setItem(
      storageKey,
      JSON.stringify({
        id: live.id,
        size: live.size,
        schema: live.schema,
        params: state,
      } satisfies StoredSession),
    );
  };
  persist();

  // -- DOM skeleton
  root.textContent = "";
  const banner = doc.createElement("div");
  banner.id = "banner";
  banner.textContent = "connection lost, reconnecting…";
  banner.hidden = true;

  const view = doc.createElement("div");
  view.id = "view";
  const frame = doc.createElement("img");
  frame.id = "frame";
  frame.width = live.size;
  frame.height = live.size;
  frame.alt = "avatar frame";
  const badgeEl = doc.createElement("span");
  badgeEl.id = "revision-badge";
  view.append(frame, badgeEl);

  const panel = doc.createElement("div");
  panel.id = "controls";
  const status = doc.createElement("div");
  status.id = "status";
  root.append(banner, view, panel, status);

  // -- revision plumbing
  const badgeGate = createRevisionGate(-1);
  const frameGate = createRevisionGate(-1);
  const showBadge = () => {
    badgeEl.textContent = `rev ${badgeGate.current()}`;
  };
  badgeGate.accept(live.revision);
  showBadge();

  const queue = createMutationQueue({
    onRevision(revision) {
      if (badgeGate.accept(revision)) showBadge();
      status.textContent = "";
    },
    onBusy(busy) {
      for (const el of panel.querySelectorAll<HTMLButtonElement>("[data-export]")) {
        el.disabled = busy;
      }
    },
    onError(error) {
      status.textContent = error instanceof Error ? error.message : String(error);
    },
  });

  const channel: LiveChannel = connectLive(
    client.liveUrl(live.id),
    {
      onFrame(pushed) {
        if (badgeGate.accept(pushed.revision)) showBadge();
        if (frameGate.accept(pushed.revision)) {
          frame.src = pngDataUrl(win, pushed.png);
          frame.dataset.revision = String(pushed.revision);
        }
      },
      onStatus(connected) {
        banner.hidden = connected;
      },
    },
    { retryMs: options.retryMs, socketFactory: options.socketFactory },
  );

  const patch = (control: string, body: ParamPatch) => {
    persist();
    queue.submit(control, () => client.patchParams(live.id, body));
  };

  // -- sliders from the schema
  const schema = live.schema;
  for (let i = 0; i < schema.expression; i++) {
    panel.appendChild(
      makeSlider(
        doc,
        { label: `expression ${i}`, min: -1, max: 1, step: 0.01, value: state.expression[i] ?? 0 },
        (v) => {
          state.expression[i] = v;
          patch(`expression ${i}`, { expression: [...state.expression] });
        },
      ),
    );
  }
  panel.appendChild(
    makeSlider(doc, { label: "jaw", min: 0, max: 1, step: 0.01, value: state.jaw }, (v) => {
      state.jaw = v;
      patch("jaw", { jaw: v });
    }),
  );
  const [eyeRows, eyeCols] = schema.eyes;
  const eyeNames = ["left eye", "right eye"];
  const axisNames = ["yaw", "pitch"];
  for (let e = 0; e < eyeRows; e++) {
    for (let a = 0; a < eyeCols; a++) {
      panel.appendChild(
        makeSlider(
          doc,
          {
            label: `${eyeNames[e] ?? `eye ${e}`} ${axisNames[a] ?? `axis ${a}`}`,
            min: -0.5,
            max: 0.5,
            step: 0.01,
            value: state.eyes[e]?.[a] ?? 0,
          },
          (v) => {
            const row = state.eyes[e];
            if (row) row[a] = v;
            patch("eyes", { eyes: state.eyes.map((r) => [...r]) });
          },
        ),
      );
    }
  }

  const cameraPatch = () => ({
    camera: {
      orbit: {
        target: [0, 0, 0] as [number, number, number],
        distance: state.camera.distance,
        yaw: state.camera.yaw,
        pitch: state.camera.pitch,
      },
    },
  });
  panel.appendChild(
    makeSlider(
      doc,
      { label: "camera yaw", min: -90, max: 90, step: 1, value: state.camera.yaw },
      (v) => {
        state.camera.yaw = v;
        patch("camera", cameraPatch());
      },
    ),
  );
  panel.appendChild(
    makeSlider(
      doc,
      { label: "camera pitch", min: -45, max: 45, step: 1, value: state.camera.pitch },
      (v) => {
        state.camera.pitch = v;
        patch("camera", cameraPatch());
      },
    ),
  );
  panel.appendChild(
    makeSlider(
      doc,
      { label: "camera distance", min: 0.3, max: 2, step: 0.01, value: state.camera.distance },
      (v) => {
        state.camera.distance = v;
        patch("camera", cameraPatch());
      },
    ),
  );

  // -- lighting: presets plus raw 27-coefficient entry
  const lighting = doc.createElement("div");
  lighting.id = "lighting";
  const presetSelect = doc.createElement("select");
  presetSelect.id = "lighting-preset";
  const bundleDefault = doc.createElement("option");
  bundleDefault.value = "";
  bundleDefault.textContent = "bundle default";
  presetSelect.appendChild(bundleDefault);
  for (const name of presetNames()) {
    const option = doc.createElement("option");
    option.value = name;
    option.textContent = name;
    presetSelect.appendChild(option);
  }
  presetSelect.value = state.lightingName in LIGHTING_PRESETS ? state.lightingName : "";
  presetSelect.addEventListener("change", () => {
    const preset = LIGHTING_PRESETS[presetSelect.value];
    if (!preset) return;
    state.lighting = [...preset];
    state.lightingName = presetSelect.value;
    patch("lighting", { lighting: state.lighting });
  });
  const rawEntry = doc.createElement("textarea");
  rawEntry.id = "lighting-raw";
  rawEntry.placeholder = "27 SH coefficients, RGB channel-major";
  const rawApply = doc.createElement("button");
  rawApply.id = "lighting-apply";
  rawApply.textContent = "apply lighting";
  rawApply.addEventListener("click", () => {
    try {
      state.lighting = parseRawLighting(rawEntry.value);
      state.lightingName = "raw";
      presetSelect.value = "";
      patch("lighting", { lighting: state.lighting });
    } catch (error) {
      status.textContent = error instanceof Error ? error.message : String(error);
    }
  });
  lighting.append(presetSelect, rawEntry, rawApply);
  panel.appendChild(lighting);

  // -- texture brush: pick a patch PNG, then click the frame to place it
  const texture = doc.createElement("div");
  texture.id = "texture";
  const patchFile = doc.createElement("input");
  patchFile.type = "file";
  patchFile.id = "patch-file";
  patchFile.accept = "image/png";
  const brushSize = doc.createElement("select");
  brushSize.id = "brush-size";
  for (const texels of [16, 32, 64, 128]) {
    if (texels > schema.t_tex) continue;
    const option = doc.createElement("option");
    option.value = String(texels);
    option.textContent = `${texels} texels`;
    brushSize.appendChild(option);
  }
  texture.append(patchFile, brushSize);
  panel.appendChild(texture);

  frame.addEventListener("click", (event) => {
    const file = patchFile.files?.[0];
    if (!file) {
      status.textContent = "choose a patch PNG first, then click the frame";
      return;
    }
    const mouse = event as MouseEvent;
    const box = frame.getBoundingClientRect();
    const [u, v] = canvasToUv(
      mouse.clientX - box.left,
      mouse.clientY - box.top,
      live.size,
      live.size,
    );
    const rect = brushRect(u, v, Number(brushSize.value), schema.t_tex);
    queue.submit("texture", async () => {
      const bytes = new Uint8Array(await file.arrayBuffer());
      return client.postTexture(live.id, rect, bytes);
    });
  });

  // -- hair picker
  const hair = doc.createElement("div");
  hair.id = "hair";
  const hairSelect = doc.createElement("select");
  hairSelect.id = "hair-bundle";
  const hairSwap = doc.createElement("button");
  hairSwap.id = "hair-swap";
  hairSwap.textContent = "swap hair";
  hairSwap.addEventListener("click", () => {
    const donor = hairSelect.value;
    if (!donor) return;
    queue.submit("hair", () => client.postHair(live.id, donor));
  });
  hair.append(hairSelect, hairSwap);
  panel.appendChild(hair);
  try {
    for (const name of await client.listBundles()) {
      const option = doc.createElement("option");
      option.value = name;
      option.textContent = name;
      hairSelect.appendChild(option);
    }
  } catch (error) {
    status.textContent = error instanceof Error ? error.message : String(error);
  }

  // -- export, disabled while any mutation is in flight
  const exportPly = doc.createElement("button");
  exportPly.id = "export-ply";
  exportPly.textContent = "export PLY";
  exportPly.dataset.export = "ply";
  exportPly.addEventListener("click", () => {
    if (exportPly.disabled) return;
    const anchor = doc.createElement("a");
    anchor.href = client.exportPlyUrl(live.id);
    anchor.download = "avatar.ply";
    anchor.click();
  });
  panel.appendChild(exportPly);

  return {
    session: live,
    badge: () => badgeGate.current(),
    idle: () => queue.idle(),
    close() {
      channel.close();
    },
  };
}
