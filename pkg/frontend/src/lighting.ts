/**
 * Lighting coefficient helpers.  The service takes 27 numbers: three rows
 * of 9 band-2 SH coefficients, RGB channel-major, basis order
 * [DC, y, z, x, xy, yz, 3z^2-1, xz, x^2-y^2].
 */

export const LIGHTING_SIZE = 27;

function coeffs(entries: Record<number, [number, number, number]>): number[] {
  const flat = new Array<number>(LIGHTING_SIZE).fill(0);
  for (const [index, rgb] of Object.entries(entries)) {
    for (let ch = 0; ch < 3; ch++) flat[ch * 9 + Number(index)] = rgb[ch]!;
  }
  return flat;
}

// the default camera orbits in from +z, so "frontal" pushes the z lobe,
// the viewer's left is world -x, and "top" is +y
export const LIGHTING_PRESETS: Record<string, number[]> = {
  frontal: coeffs({ 0: [1.0, 1.0, 1.0], 2: [0.45, 0.45, 0.45] }),
  "left-warm": coeffs({ 0: [1.05, 0.95, 0.8], 3: [-0.5, -0.4, -0.25] }),
  "top-cool": coeffs({ 0: [0.85, 0.95, 1.1], 1: [0.35, 0.45, 0.6] }),
};

export function presetNames(): string[] {
  return Object.keys(LIGHTING_PRESETS);
}

/** Parse a raw 27-number entry (comma/whitespace separated). */
export function parseRawLighting(text: string): number[] {
  const values = text
    .split(/[\s,]+/)
    .filter((tok) => tok.length > 0)
    .map(Number);
  if (values.length !== LIGHTING_SIZE || values.some((v) => !Number.isFinite(v))) {
    throw new Error(`lighting needs ${LIGHTING_SIZE} finite numbers, got "${text}"`);
  }
  return values;
}
