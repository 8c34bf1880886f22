use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use unieval::metrics::{class_summaries, ClassSummary, DEFAULT_CONFIDENCE_THRESHOLD, DEFAULT_IOU_THRESHOLD};
use unieval::subsets::{mine_subsets, DiscretizationSpec, SubsetAttribute, SubsetDescriptor};
use unieval::{ClassId, Dataset, MatchingConfig, RecordSet, RecordStore, RecordsMeta};

use crate::config::ServiceConfig;
use crate::error::ServiceError;

/// One loaded dataset with its derived artifacts. Replacing the entry is
/// the only way caches get invalidated.
pub struct LoadedDataset {
    pub id: String,
    pub meta: RecordsMeta,
    pub store: RecordStore,
    summaries: OnceLock<Vec<ClassSummary>>,
    discretizations: Mutex<HashMap<u64, Arc<DiscretizationSpec>>>,
    subsets: Mutex<HashMap<(ClassId, u64), Arc<Vec<SubsetDescriptor>>>>,
}

impl LoadedDataset {
    pub fn new(id: &str, set: RecordSet) -> Self {
        let store = RecordStore::new(set.records, set.meta.hierarchy.clone());
        LoadedDataset {
            id: id.to_string(),
            meta: set.meta,
            store,
            summaries: OnceLock::new(),
            discretizations: Mutex::new(HashMap::new()),
            subsets: Mutex::new(HashMap::new()),
        }
    }

    pub fn summaries(&self) -> &[ClassSummary] {
        self.summaries.get_or_init(|| {
            class_summaries(
                self.store.records(),
                self.store.hierarchy(),
                DEFAULT_IOU_THRESHOLD,
                DEFAULT_CONFIDENCE_THRESHOLD,
            )
        })
    }

    pub fn discretization(&self, beta: f64) -> Result<Arc<DiscretizationSpec>, ServiceError> {
        let key = beta.to_bits();
        if let Some(d) = self.discretizations.lock().unwrap().get(&key) {
            return Ok(d.clone());
        }
        let spec = Arc::new(DiscretizationSpec::fit(
            self.store.records(),
            beta,
            &SubsetAttribute::DEFAULT,
        )?);
        self.discretizations.lock().unwrap().insert(key, spec.clone());
        Ok(spec)
    }

    /// Mined (unranked) subsets of `class`, cached per (class, beta).
    pub fn subsets(&self, class: ClassId, beta: f64) -> Result<Arc<Vec<SubsetDescriptor>>, ServiceError> {
        let key = (class, beta.to_bits());
        if let Some(s) = self.subsets.lock().unwrap().get(&key) {
            return Ok(s.clone());
        }
        let spec = self.discretization(beta)?;
        let mined = Arc::new(mine_subsets(self.store.records(), class, &spec, self.store.hierarchy())?);
        self.subsets.lock().unwrap().insert(key, mined.clone());
        Ok(mined)
    }
}

pub struct AppState {
    pub config: ServiceConfig,
    datasets: RwLock<BTreeMap<String, Arc<LoadedDataset>>>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            config,
            datasets: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn insert_records(&self, id: &str, set: RecordSet) {
        let entry = Arc::new(LoadedDataset::new(id, set));
        self.datasets.write().unwrap().insert(id.to_string(), entry);
    }

    /// Matches `dataset` and registers the result under `id`.
    pub fn load_dataset(&self, id: &str, dataset: &Dataset, matching: MatchingConfig) -> Result<(), ServiceError> {
        let records = unieval::match_dataset(dataset, &matching)?;
        self.insert_records(
            id,
            RecordSet {
                meta: RecordsMeta::from_dataset(dataset, matching),
                records,
            },
        );
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<Arc<LoadedDataset>, ServiceError> {
        self.datasets
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown dataset '{id}'")))
    }

    pub fn ids(&self) -> Vec<String> {
        self.datasets.read().unwrap().keys().cloned().collect()
    }

    pub fn all(&self) -> Vec<Arc<LoadedDataset>> {
        self.datasets.read().unwrap().values().cloned().collect()
    }
}
