/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_view_free: (a: number, b: number) => void;
export const colorbar: (a: number, b: number, c: number) => [number, number, number];
export const ercView: (a: number, b: number, c: bigint) => [number, number, number];
export const scorecamView: (a: number, b: number, c: bigint) => [number, number, number];
export const statsView: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number];
export const view_height: (a: number) => number;
export const view_rgba: (a: number) => [number, number];
export const view_text: (a: number) => [number, number];
export const view_width: (a: number) => number;
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
