#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use emoanno_core::annotator::{
    Backend, BackendError, BackendKind, ChatRequest, Completion, LabelerSpec, ManualClock, RequestContext,
    SimulatedBackend, Throttle, ThrottleConfig,
};
use emoanno_core::corpus::{write_manifest, SegmentRecord};
use emoanno_core::labels::{ClassLabel, Emotion};

/// Simulated backend that counts calls.
pub struct Counting {
    inner: SimulatedBackend,
    calls: AtomicUsize,
}

impl Counting {
    pub fn new(spec: LabelerSpec, seed: u64) -> Self {
        Self {
            inner: SimulatedBackend::from_spec(spec, seed).unwrap(),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for Counting {
    fn complete(&self, request: &ChatRequest, ctx: &RequestContext<'_>) -> Result<Completion, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request, ctx)
    }

    fn kind(&self) -> BackendKind {
        self.inner.kind()
    }
}

/// Throttle that never sleeps for real.
pub fn fast_throttle() -> Throttle {
    Throttle::new(
        ThrottleConfig {
            requests_per_second: 1e6,
            ..Default::default()
        },
        Arc::new(ManualClock::default()),
    )
}

fn write_frame(path: &Path, rgb: [u8; 3]) {
    let img = image::RgbImage::from_fn(16, 12, |x, y| {
        image::Rgb([rgb[0], rgb[1].wrapping_add(x as u8), rgb[2].wrapping_add(y as u8)])
    });
    img.save(path).unwrap();
}

/// Ten segments with 5 to 14 distinct frames each, ground truth cycling
/// through the seven emotions. Returns the manifest path.
pub fn fixture(root: &Path) -> PathBuf {
    fixture_n(root, 10)
}

pub fn fixture_n(root: &Path, n: usize) -> PathBuf {
    let mut segments = Vec::new();
    for i in 0..n {
        let id = format!("seg{i:02}");
        let dir = root.join("frames").join(&id);
        std::fs::create_dir_all(&dir).unwrap();
        for f in 0..(5 + i % 10) {
            write_frame(&dir.join(format!("{f:04}.png")), [i as u8 * 20, f as u8 * 15, 100]);
        }
        segments.push(SegmentRecord {
            segment_id: id.clone(),
            ground_truth: Emotion::ALL[i % 7],
            frames_dir: PathBuf::from("frames").join(&id),
        });
    }
    let manifest = root.join("manifest.csv");
    write_manifest(&manifest, &segments).unwrap();
    manifest
}
