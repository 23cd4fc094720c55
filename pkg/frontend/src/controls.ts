import { debounce } from "./debounce.js";

/** Control changes collapse into one request this many ms after the burst. */
export const PATCH_DEBOUNCE_MS = 30;

export interface SliderSpec {
  label: string;
  min: number;
  max: number;
  step: number;
  value: number;
}

/** Build a labeled range input wired so a drag burst emits one change. */
export function makeSlider(
  doc: Document,
  spec: SliderSpec,
  onChange: (value: number) => void,
): HTMLElement {
  const wrap = doc.createElement("label");
  wrap.className = "control";
  wrap.textContent = spec.label;
  const input = doc.createElement("input");
  input.type = "range";
  input.min = String(spec.min);
  input.max = String(spec.max);
  input.step = String(spec.step);
  input.value = String(spec.value);
  input.dataset.control = spec.label;
  const send = debounce((v: number) => onChange(v), PATCH_DEBOUNCE_MS);
  input.addEventListener("input", () => send(Number(input.value)));
  wrap.appendChild(input);
  return wrap;
}
