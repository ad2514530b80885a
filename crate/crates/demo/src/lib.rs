//! Browser bindings: call-count explorer, dense retrieval with its
//! retrieval-augmented posterior, and BLEU-1/ROUGE-L scoring. Results
//! cross the boundary as JSON strings.

pub mod ops;

use serde::Serialize;
use wasm_bindgen::prelude::*;

fn to_json<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = callCounts)]
pub fn call_counts(domains: usize, entities: usize, docs: usize) -> Result<String, JsError> {
    to_json(&ops::call_counts(domains, entities, docs).map_err(|e| JsError::new(&e))?)
}

#[wasm_bindgen(js_name = textScores)]
pub fn text_scores(candidate: &str, reference: &str) -> Result<String, JsError> {
    to_json(&ops::text_scores(candidate, reference))
}

#[wasm_bindgen]
pub struct Retriever(ops::DkrDemo);

#[wasm_bindgen]
impl Retriever {
    /// Trains on the default toy corpus; takes a few seconds.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, steps: usize) -> Result<Retriever, JsError> {
        ops::DkrDemo::train(seed.into(), steps).map(Retriever).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = finalLoss)]
    pub fn final_loss(&self) -> f64 {
        self.0.final_loss
    }

    #[wasm_bindgen(js_name = trainingR1)]
    pub fn training_r1(&self) -> Result<f64, JsError> {
        self.0.training_r1().map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = exampleQueries)]
    pub fn example_queries(&self, count: usize) -> Result<String, JsError> {
        to_json(&self.0.example_queries(count))
    }

    pub fn retrieve(&self, query: &str, k: usize, n: usize) -> Result<String, JsError> {
        to_json(&self.0.retrieve(query, k, n).map_err(|e| JsError::new(&e))?)
    }
}
