//! Memoizing wrapper around an inference engine.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use lru::LruCache;
use sprayeval_core::{AblationRequest, EngineDescriptor, EngineError, InferenceEngine, ModelOutput, Tensor};

/// 64-bit content hash of an image and an ablation set.
pub fn content_key(image: &Tensor, ablation: &AblationRequest) -> u64 {
    let mut h = DefaultHasher::new();
    h.write_usize(image.shape().len());
    for &d in image.shape() {
        h.write_usize(d);
    }
    for v in image.data() {
        h.write_u32(v.to_bits());
    }
    h.write_usize(ablation.channels().len());
    for &c in ablation.channels() {
        h.write_usize(c);
    }
    h.finish()
}

struct Entry {
    image: Tensor,
    ablation: AblationRequest,
    output: ModelOutput,
}

/// LRU cache of forward results keyed by [`content_key`].
///
/// A hit is only served when the stored image and ablation set equal the
/// query, so hash collisions fall through to the inner engine. Capacity 0
/// disables caching. The inner engine runs outside the lock.
pub struct CachedEngine<E> {
    inner: E,
    cache: Option<Mutex<LruCache<u64, Entry>>>,
    inner_calls: AtomicU64,
}

impl<E: InferenceEngine> CachedEngine<E> {
    pub fn new(inner: E, capacity: usize) -> Self {
        let cache = NonZeroUsize::new(capacity).map(|c| Mutex::new(LruCache::new(c)));
        Self { inner, cache, inner_calls: AtomicU64::new(0) }
    }

    /// Number of forwards delegated to the inner engine.
    pub fn inner_calls(&self) -> u64 {
        self.inner_calls.load(Ordering::Relaxed)
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }

    fn call_inner(&self, image: &Tensor, ablation: &AblationRequest) -> Result<ModelOutput, EngineError> {
        self.inner_calls.fetch_add(1, Ordering::Relaxed);
        self.inner.forward_ablated(image, ablation)
    }
}

impl<E: InferenceEngine> InferenceEngine for CachedEngine<E> {
    fn descriptor(&self) -> EngineDescriptor {
        self.inner.descriptor()
    }

    fn forward_ablated(&self, image: &Tensor, ablation: &AblationRequest) -> Result<ModelOutput, EngineError> {
        let Some(cache) = &self.cache else {
            return self.call_inner(image, ablation);
        };
        let key = content_key(image, ablation);
        {
            let mut guard = cache.lock().unwrap_or_else(|p| p.into_inner());
            if let Some(e) = guard.get(&key) {
                if e.image == *image && e.ablation == *ablation {
                    return Ok(e.output.clone());
                }
            }
        }
        let output = self.call_inner(image, ablation)?;
        let entry = Entry { image: image.clone(), ablation: ablation.clone(), output: output.clone() };
        cache.lock().unwrap_or_else(|p| p.into_inner()).put(key, entry);
        Ok(output)
    }
}
