use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::Arc;

use serde::Serialize;
use uvmakeup_core::fusion::TransferRequest;
use uvmakeup_core::pipeline::{Timings, TransferResult};
use uvmakeup_core::Result;

/// A finished transfer with its artifacts encoded as PNG.
#[derive(Clone, Debug, Serialize)]
pub struct StoredResult {
    pub id: String,
    pub request: TransferRequest,
    /// Style ids or `upload:<sha>` markers of the references used.
    pub references: Vec<String>,
    pub pattern_empty: bool,
    pub timings: Timings,
    #[serde(skip)]
    pub artifacts: BTreeMap<String, Vec<u8>>,
}

impl StoredResult {
    pub fn new(id: String, references: Vec<String>, res: &TransferResult) -> Result<Self> {
        let mut artifacts = BTreeMap::new();
        let it = &res.intermediates;
        artifacts.insert("output".to_string(), res.output.encode_png()?);
        artifacts.insert("source_texture".to_string(), it.source_texture.image().encode_png()?);
        for (i, t) in it.reference_textures.iter().enumerate() {
            artifacts.insert(format!("reference_texture_{i}"), t.image().encode_png()?);
        }
        for (i, t) in it.color_textures.iter().enumerate() {
            artifacts.insert(format!("color_texture_{i}"), t.image().encode_png()?);
        }
        artifacts.insert("pattern_mask".to_string(), it.pattern_mask.encode_png()?);
        artifacts.insert("output_texture".to_string(), it.output_texture.image().encode_png()?);
        Ok(Self {
            id,
            request: res.request.clone(),
            references,
            pattern_empty: res.pattern_empty,
            timings: res.timings.clone(),
            artifacts,
        })
    }

    pub fn artifact_names(&self) -> Vec<String> {
        self.artifacts.keys().cloned().collect()
    }
}

/// Bounded in-memory store; inserting past capacity evicts the oldest result.
pub struct ResultStore {
    capacity: usize,
    order: VecDeque<String>,
    map: HashMap<String, Arc<StoredResult>>,
}

impl ResultStore {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), order: VecDeque::new(), map: HashMap::new() }
    }

    pub fn get(&self, id: &str) -> Option<Arc<StoredResult>> {
        self.map.get(id).cloned()
    }

    pub fn insert(&mut self, r: StoredResult) -> Arc<StoredResult> {
        let r = Arc::new(r);
        if self.map.insert(r.id.clone(), Arc::clone(&r)).is_none() {
            self.order.push_back(r.id.clone());
        }
        while self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.map.remove(&old);
            }
        }
        r
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
