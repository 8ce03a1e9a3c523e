/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_worlddemo_free: (a: number, b: number) => void;
export const osc_encode: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const soil_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const worlddemo_add_obstacle: (a: number, b: number, c: number, d: number) => void;
export const worlddemo_new: (a: number) => number;
export const worlddemo_set_reflex: (a: number, b: number) => void;
export const worlddemo_state: (a: number) => [number, number];
export const worlddemo_step: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
