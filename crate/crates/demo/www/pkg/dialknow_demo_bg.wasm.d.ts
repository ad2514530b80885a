/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_retriever_free: (a: number, b: number) => void;
export const callCounts: (a: number, b: number, c: number) => [number, number, number, number];
export const retriever_exampleQueries: (a: number, b: number) => [number, number, number, number];
export const retriever_finalLoss: (a: number) => number;
export const retriever_new: (a: number, b: number) => [number, number, number];
export const retriever_retrieve: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const retriever_trainingR1: (a: number) => [number, number, number];
export const textScores: (a: number, b: number, c: number, d: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
