/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_phantom_free: (a: number, b: number) => void;
export const __wbg_prompt_free: (a: number, b: number) => void;
export const fuzzy_prompt: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number];
export const metrics: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
export const perturb: (a: number, b: number, c: number, d: number) => [number, number];
export const phantom: (a: number, b: number, c: number, d: number) => [number, number, number];
export const phantom_lesion: (a: number) => [number, number];
export const phantom_size: (a: number) => number;
export const phantom_x1: (a: number) => [number, number];
export const phantom_x2: (a: number) => [number, number];
export const phantom_y: (a: number) => [number, number];
export const prompt_cells: (a: number) => [number, number];
export const prompt_dropped: (a: number) => number;
export const prompt_rounds: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
