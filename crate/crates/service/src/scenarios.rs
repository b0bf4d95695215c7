use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use clinrisk_core::whatif::EditOp;
use clinrisk_core::Scenario;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::ApiError;

/// One line of the scenario log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LogRecord {
    Create { scenario_id: String, base_patient_id: String, label: String },
    Edit { scenario_id: String, edit: EditOp },
}

fn numeric_id(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

/// Live scenarios keyed by their numeric id. Each scenario has its own lock
/// so concurrent edits to different scenarios do not contend.
#[derive(Debug, Default)]
pub struct ScenarioStore {
    scenarios: RwLock<BTreeMap<u64, Arc<Mutex<Scenario>>>>,
    next_id: AtomicU64,
    log: Option<Mutex<File>>,
}

impl ScenarioStore {
    pub fn in_memory() -> Self {
        Self { next_id: AtomicU64::new(1), ..Self::default() }
    }

    /// Replays `path` (if it exists) and appends to it from then on.
    /// Records that no longer apply are skipped with a warning.
    pub fn open(path: &Path, engine: Option<&Engine>) -> std::io::Result<Self> {
        let mut store = Self::in_memory();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<LogRecord>(&line) {
                    Ok(record) => {
                        if let Err(e) = store.replay(record, engine) {
                            log::warn!("scenario log line {}: skipped ({})", n + 1, e.message);
                        }
                    }
                    Err(e) => log::warn!("scenario log line {}: unreadable ({e})", n + 1),
                }
            }
        }
        store.log = Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?));
        Ok(store)
    }

    fn replay(&self, record: LogRecord, engine: Option<&Engine>) -> Result<(), ApiError> {
        let engine = engine.ok_or_else(ApiError::not_loaded)?;
        match record {
            LogRecord::Create { scenario_id, base_patient_id, label } => {
                let id = numeric_id(&scenario_id).ok_or_else(|| ApiError::invalid_request(format!("bad scenario id {scenario_id:?}")))?;
                let base = engine.patient(&base_patient_id).ok_or_else(|| ApiError::patient_not_found(&base_patient_id))?;
                let scenario = Scenario::new(scenario_id, label, &base.input, &engine.model, &engine.vocabulary)?;
                self.scenarios.write().expect("scenario map").insert(id, Arc::new(Mutex::new(scenario)));
                self.next_id.fetch_max(id + 1, Ordering::SeqCst);
            }
            LogRecord::Edit { scenario_id, edit } => {
                let slot = self.get(&scenario_id)?;
                let mut scenario = slot.lock().expect("scenario lock");
                *scenario = scenario.apply_edit(edit, &engine.model, &engine.vocabulary)?;
            }
        }
        Ok(())
    }

    fn append(&self, record: &LogRecord) {
        if let Some(log) = &self.log {
            let line = serde_json::to_string(record).expect("log record serializes");
            let mut file = log.lock().expect("log lock");
            if let Err(e) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                log::error!("cannot append to scenario log: {e}");
            }
        }
    }

    fn get(&self, scenario_id: &str) -> Result<Arc<Mutex<Scenario>>, ApiError> {
        numeric_id(scenario_id)
            .and_then(|id| self.scenarios.read().expect("scenario map").get(&id).cloned())
            .ok_or_else(|| ApiError::scenario_not_found(scenario_id))
    }

    pub fn create(&self, engine: &Engine, base_patient_id: &str, label: Option<String>) -> Result<Scenario, ApiError> {
        let base = engine.patient(base_patient_id).ok_or_else(|| ApiError::patient_not_found(base_patient_id))?;
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let scenario_id = format!("s{id}");
        let label = label.unwrap_or_else(|| scenario_id.clone());
        let scenario = Scenario::new(scenario_id.clone(), label.clone(), &base.input, &engine.model, &engine.vocabulary)?;
        self.scenarios.write().expect("scenario map").insert(id, Arc::new(Mutex::new(scenario.clone())));
        self.append(&LogRecord::Create { scenario_id, base_patient_id: base_patient_id.to_string(), label });
        Ok(scenario)
    }

    /// Applies `edit` atomically: a rejected edit leaves the scenario as it was.
    pub fn edit(&self, engine: &Engine, scenario_id: &str, edit: EditOp) -> Result<Scenario, ApiError> {
        let slot = self.get(scenario_id)?;
        let mut scenario = slot.lock().expect("scenario lock");
        let next = scenario.apply_edit(edit.clone(), &engine.model, &engine.vocabulary)?;
        *scenario = next.clone();
        self.append(&LogRecord::Edit { scenario_id: scenario_id.to_string(), edit });
        Ok(next)
    }

    pub fn scenario(&self, scenario_id: &str) -> Result<Scenario, ApiError> {
        Ok(self.get(scenario_id)?.lock().expect("scenario lock").clone())
    }

    /// Scenarios in creation order, optionally only those built on `base`.
    pub fn list(&self, base: Option<&str>) -> Vec<Scenario> {
        let slots: Vec<_> = self.scenarios.read().expect("scenario map").values().cloned().collect();
        slots
            .iter()
            .map(|s| s.lock().expect("scenario lock").clone())
            .filter(|s| base.is_none_or(|b| s.base_patient_id == b))
            .collect()
    }
}
