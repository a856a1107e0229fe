/* tslint:disable */
/* eslint-disable */

export class Phantom {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly lesion: Uint8Array;
    readonly size: number;
    readonly x1: Float32Array;
    readonly x2: Float32Array;
    readonly y: Float32Array;
}

export class Prompt {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    readonly cells: Uint8Array;
    readonly dropped: boolean;
    /**
     * Space-separated rounds such as `d3 e8`: mode initial and kernel index.
     */
    readonly rounds: string;
}

/**
 * One prompt draw from `label` (0/1 cells, row-major).
 */
export function fuzzy_prompt(label: Uint8Array, height: number, width: number, p: number, q: number, t: number, seed: number): Prompt;

/**
 * PSNR, SSIM, NMSE and (with a non-empty `lesion`) lesion-region PSNR of
 * `y_hat` against `y`, as a JSON object.
 */
export function metrics(y_hat: Float32Array, y: Float32Array, height: number, width: number, lesion: Uint8Array): string;

/**
 * `y + sigma·n` with a deterministic standard normal `n`, clamped to [−1, 1].
 */
export function perturb(y: Float32Array, sigma: number, seed: number): Float32Array;

/**
 * Renders case `index` of the default phantom family with `seed`.
 */
export function phantom(index: number, seed: number, resolution: number, noise_std: number): Phantom;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_phantom_free: (a: number, b: number) => void;
    readonly __wbg_prompt_free: (a: number, b: number) => void;
    readonly fuzzy_prompt: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
    readonly metrics: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly perturb: (a: number, b: number, c: number, d: number) => [number, number];
    readonly phantom: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly phantom_lesion: (a: number) => [number, number];
    readonly phantom_size: (a: number) => number;
    readonly phantom_x1: (a: number) => [number, number];
    readonly phantom_x2: (a: number) => [number, number];
    readonly phantom_y: (a: number) => [number, number];
    readonly prompt_cells: (a: number) => [number, number];
    readonly prompt_dropped: (a: number) => number;
    readonly prompt_rounds: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
