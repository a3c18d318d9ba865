//! Dataset generation and the on-disk container.
//!
//! Three files per experiment: a labeled synthetic-depth set, an unlabeled
//! (pseudo-color, degraded-depth) pair set, and a labeled held-out test set
//! whose labels are used for evaluation only. Every sample is generated from
//! its own seed derived from (master seed, stream, index), so the three
//! streams are disjoint by construction and generation order or thread count
//! cannot change the data.
//!
//! File format `XMPD` version 1, all values little-endian:
//!
//! ```text
//! magic "XMPD" | version u32 | mode u8 | kind u8 | count u64
//! | window u32 | color_channels u32 | label_len u32
//! per record:
//!   color  f64 * (channels * window^2)   (planar; omitted when channels = 0)
//!   depth  f64 * window^2
//!   label  f64 * label_len
//!   pose   quaternion wxyz f64 * 4, translation f64 * 3
//!   seed   u64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::colorize::{colorize, StyleSpec};
use super::degrade::{sensor_degrade, GapSpec};
use super::filter::{crop_color_normalize, crop_depth_normalize, median_filter_5x5};
use super::hand::{hand_label, sample_hand_articulation, HandSpec, HAND_JOINTS};
use super::pose::{sample_pose, PoseRanges};
use super::render::{compose_clutter, render_depth, ClutterSpec};
use super::{
    project_corners, window_origin, CameraIntrinsics, ObjectModel, Result, RigidPose, SceneError,
    Vec3,
};

pub const STREAM_SYNTH: u64 = 1;
pub const STREAM_PAIRS: u64 = 2;
pub const STREAM_TEST: u64 = 3;

/// Per-sample seed from (master seed, stream id, sample index) via a
/// splitmix64-style mix.
pub fn sample_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut x = master
        ^ stream.wrapping_mul(0xA24BAED4963EE407)
        ^ index.wrapping_mul(0x9FB21C651E98DF25);
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskMode {
    Object,
    Hand,
}

impl TaskMode {
    pub fn tag(self) -> &'static str {
        match self {
            TaskMode::Object => "object",
            TaskMode::Hand => "hand",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Synth,
    Pairs,
    Test,
}

/// Everything the generator needs to produce one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub mode: TaskMode,
    pub image_size: usize,
    pub window: usize,
    pub focal: f64,
    /// Depth normalization range upper bound, meters.
    pub depth_max: f64,
    /// Cuboid extents, meters (object mode).
    pub extents: [f64; 3],
    /// Attach the symmetry-breaking stud to the object (see
    /// [`ObjectModel::studded_cuboid`]); without it depth images of the
    /// plain cuboid cannot determine the pose.
    pub object_stud: bool,
    pub ranges: PoseRanges,
    pub gap: GapSpec,
    pub style: StyleSpec,
    pub clutter: ClutterSpec,
    pub hand: HandSpec,
    /// Uniform rescaling amplitude for training samples (0 disables);
    /// test samples always use the nominal model.
    pub scale_aug: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            mode: TaskMode::Object,
            image_size: 64,
            window: 32,
            focal: 140.0,
            depth_max: 3.0,
            extents: [0.10, 0.08, 0.06],
            object_stud: true,
            ranges: PoseRanges::default(),
            gap: GapSpec::default(),
            style: StyleSpec::default(),
            clutter: ClutterSpec::default(),
            hand: HandSpec::default(),
            scale_aug: 0.10,
        }
    }
}

impl SceneConfig {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal,
            fy: self.focal,
            cx: self.image_size as f64 / 2.0,
            cy: self.image_size as f64 / 2.0,
            width: self.image_size,
            height: self.image_size,
        }
    }

    pub fn nominal_model(&self) -> ObjectModel {
        let e = Vec3::new(self.extents[0], self.extents[1], self.extents[2]);
        if self.object_stud {
            ObjectModel::studded_cuboid(e)
        } else {
            ObjectModel::cuboid(e)
        }
    }

    pub fn label_len(&self) -> usize {
        match self.mode {
            TaskMode::Object => 16,
            TaskMode::Hand => 3 * HAND_JOINTS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window > self.image_size {
            return Err(SceneError::BadConfig(format!(
                "window {} must be in 1..=image_size {}",
                self.window, self.image_size
            )));
        }
        if !(self.depth_max > 0.0) {
            return Err(SceneError::BadConfig("depth_max must be positive".into()));
        }
        self.intrinsics().validate()
    }
}

/// One generated sample. Pair and test records carry both halves of the
/// aligned (color, depth) pair; only synth and test records carry a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// Normalized color window, planar channels; None for the synth stream.
    pub color: Option<Vec<f64>>,
    /// Normalized depth window (synth: filtered clean render; pairs/test:
    /// degraded sensor depth).
    pub depth: Vec<f64>,
    pub label: Option<Vec<f64>>,
    /// Pose bookkeeping (not a training label): rotation quaternion wxyz.
    pub quat: [f64; 4],
    pub trans: [f64; 3],
    pub seed: u64,
}

impl Record {
    pub fn pose(&self) -> RigidPose {
        RigidPose::from_quaternion(self.quat, self.trans)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub mode: TaskMode,
    pub kind: DatasetKind,
    pub window: usize,
    pub color_channels: usize,
    pub label_len: usize,
    pub records: Vec<Record>,
}

/// Generate one record from its sample seed.
pub fn generate_record(cfg: &SceneConfig, kind: DatasetKind, seed: u64) -> Result<Record> {
    let intr = cfg.intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for _attempt in 0..64 {
        let pose = sample_pose(&mut rng, &cfg.ranges);
        let scale = if kind != DatasetKind::Test && cfg.scale_aug > 0.0 {
            1.0 + rng.random_range(-cfg.scale_aug..=cfg.scale_aug)
        } else {
            1.0
        };

        let (model, label) = match cfg.mode {
            TaskMode::Object => {
                let model = cfg.nominal_model().scaled(scale);
                let label = match project_corners(&model, &pose, &intr, cfg.window) {
                    Ok(l) => l,
                    Err(SceneError::BehindCamera { .. }) => continue,
                    Err(e) => return Err(e),
                };
                (model, label)
            }
            TaskMode::Hand => {
                let hand = sample_hand_articulation(&mut rng, &cfg.hand);
                let label = hand_label(&hand, &pose);
                (hand.model.scaled(scale), label)
            }
        };

        let object_depth = match render_depth(&model, &pose, &intr) {
            Ok(img) => img,
            Err(SceneError::OutOfView) => continue,
            Err(e) => return Err(e),
        };
        let scene = compose_clutter(&object_depth, &mut rng, &cfg.clutter);
        let (left, top) = window_origin(&pose, &intr, cfg.window)?;
        let quat = pose.to_quaternion();
        let trans = [pose.translation.x, pose.translation.y, pose.translation.z];

        let record = match kind {
            DatasetKind::Synth => {
                let filtered = median_filter_5x5(&scene);
                Record {
                    color: None,
                    depth: crop_depth_normalize(&filtered, left, top, cfg.window, cfg.depth_max),
                    label: Some(label),
                    quat,
                    trans,
                    seed,
                }
            }
            DatasetKind::Pairs | DatasetKind::Test => {
                let color_img = colorize(&scene, &model, &pose, &intr, &mut rng, &cfg.style);
                let real = sensor_degrade(&scene, &mut rng, &cfg.gap);
                Record {
                    color: Some(crop_color_normalize(&color_img, left, top, cfg.window)),
                    depth: crop_depth_normalize(&real, left, top, cfg.window, cfg.depth_max),
                    label: (kind == DatasetKind::Test).then_some(label),
                    quat,
                    trans,
                    seed,
                }
            }
        };
        return Ok(record);
    }
    Err(SceneError::OutOfView)
}

fn generate_stream(
    cfg: &SceneConfig,
    kind: DatasetKind,
    stream: u64,
    count: usize,
    master_seed: u64,
    threads: usize,
) -> Result<Dataset> {
    let gen_range = |lo: usize, hi: usize| -> Result<Vec<Record>> {
        (lo..hi)
            .map(|i| generate_record(cfg, kind, sample_seed(master_seed, stream, i as u64)))
            .collect()
    };

    let records = if threads <= 1 || count < 2 * threads {
        gen_range(0, count)?
    } else {
        let chunk = count.div_ceil(threads);
        let mut parts: Vec<Result<Vec<Record>>> = Vec::new();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|t| {
                    let lo = t * chunk;
                    let hi = ((t + 1) * chunk).min(count);
                    scope.spawn(move || gen_range(lo, hi))
                })
                .collect();
            for h in handles {
                parts.push(h.join().expect("generator thread panicked"));
            }
        });
        let mut all = Vec::with_capacity(count);
        for p in parts {
            all.extend(p?);
        }
        all
    };

    Ok(Dataset {
        mode: cfg.mode,
        kind,
        window: cfg.window,
        color_channels: if kind == DatasetKind::Synth { 0 } else { 3 },
        label_len: if kind == DatasetKind::Pairs {
            0
        } else {
            cfg.label_len()
        },
        records,
    })
}

#[derive(Debug, Clone)]
pub struct GeneratedSets {
    pub synth: Dataset,
    pub pairs: Dataset,
    pub test: Dataset,
}

/// Generate the three datasets. Sizes are honored exactly; results are
/// independent of `threads`.
pub fn build_datasets(
    cfg: &SceneConfig,
    synth_count: usize,
    pair_count: usize,
    test_count: usize,
    master_seed: u64,
    threads: usize,
) -> Result<GeneratedSets> {
    cfg.validate()?;
    Ok(GeneratedSets {
        synth: generate_stream(cfg, DatasetKind::Synth, STREAM_SYNTH, synth_count, master_seed, threads)?,
        pairs: generate_stream(cfg, DatasetKind::Pairs, STREAM_PAIRS, pair_count, master_seed, threads)?,
        test: generate_stream(cfg, DatasetKind::Test, STREAM_TEST, test_count, master_seed, threads)?,
    })
}

// --- binary container ---

const MAGIC: &[u8; 4] = b"XMPD";
const VERSION: u32 = 1;

fn io_err(path: &Path, source: std::io::Error) -> SceneError {
    SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> SceneError {
    SceneError::Malformed {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

struct Le<W: Write>(W);

impl<W: Write> Le<W> {
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.0.write_all(&[v])
    }
    fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        for v in vs {
            self.0.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

struct Rd<R: Read>(R);

impl<R: Read> Rd<R> {
    fn u32(&mut self) -> std::io::Result<u32> {
        let mut b = [0u8; 4];
        self.0.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn u8(&mut self) -> std::io::Result<u8> {
        let mut b = [0u8; 1];
        self.0.read_exact(&mut b)?;
        Ok(b[0])
    }
    fn f64s(&mut self, n: usize) -> std::io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            self.0.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    }
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = Le(BufWriter::new(file));
    let res = (|| -> std::io::Result<()> {
        w.0.write_all(MAGIC)?;
        w.u32(VERSION)?;
        w.u8(match ds.mode {
            TaskMode::Object => 0,
            TaskMode::Hand => 1,
        })?;
        w.u8(match ds.kind {
            DatasetKind::Synth => 0,
            DatasetKind::Pairs => 1,
            DatasetKind::Test => 2,
        })?;
        w.u64(ds.records.len() as u64)?;
        w.u32(ds.window as u32)?;
        w.u32(ds.color_channels as u32)?;
        w.u32(ds.label_len as u32)?;
        for r in &ds.records {
            if ds.color_channels > 0 {
                w.f64s(r.color.as_ref().expect("pair/test record has color"))?;
            }
            w.f64s(&r.depth)?;
            if let Some(label) = &r.label {
                w.f64s(label)?;
            }
            w.f64s(&r.quat)?;
            w.f64s(&r.trans)?;
            w.u64(r.seed)?;
        }
        w.0.flush()
    })();
    res.map_err(|e| io_err(path, e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = Rd(BufReader::new(file));

    let mut magic = [0u8; 4];
    r.0.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != MAGIC {
        return Err(malformed(path, "bad magic, expected XMPD"));
    }
    let version = r.u32().map_err(|e| io_err(path, e))?;
    if version != VERSION {
        return Err(malformed(path, format!("unsupported version {version}")));
    }
    let mode = match r.u8().map_err(|e| io_err(path, e))? {
        0 => TaskMode::Object,
        1 => TaskMode::Hand,
        m => return Err(malformed(path, format!("unknown mode tag {m}"))),
    };
    let kind = match r.u8().map_err(|e| io_err(path, e))? {
        0 => DatasetKind::Synth,
        1 => DatasetKind::Pairs,
        2 => DatasetKind::Test,
        k => return Err(malformed(path, format!("unknown kind tag {k}"))),
    };
    let count = r.u64().map_err(|e| io_err(path, e))? as usize;
    let window = r.u32().map_err(|e| io_err(path, e))? as usize;
    let channels = r.u32().map_err(|e| io_err(path, e))? as usize;
    let label_len = r.u32().map_err(|e| io_err(path, e))? as usize;
    if window == 0 || window > 4096 {
        return Err(malformed(path, format!("implausible window {window}")));
    }

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let color = if channels > 0 {
            Some(
                r.f64s(channels * window * window)
                    .map_err(|e| io_err(path, e))?,
            )
        } else {
            None
        };
        let depth = r.f64s(window * window).map_err(|e| io_err(path, e))?;
        let label = if label_len > 0 {
            Some(r.f64s(label_len).map_err(|e| io_err(path, e))?)
        } else {
            None
        };
        let quat = r.f64s(4).map_err(|e| io_err(path, e))?;
        let trans = r.f64s(3).map_err(|e| io_err(path, e))?;
        let seed = r.u64().map_err(|e| io_err(path, e))?;
        records.push(Record {
            color,
            depth,
            label,
            quat: [quat[0], quat[1], quat[2], quat[3]],
            trans: [trans[0], trans[1], trans[2]],
            seed,
        });
    }
    Ok(Dataset {
        mode,
        kind,
        window,
        color_channels: channels,
        label_len,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_cfg() -> SceneConfig {
        SceneConfig {
            image_size: 48,
            window: 24,
            focal: 105.0,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn requested_sizes_are_honored_exactly() {
        let sets = build_datasets(&small_cfg(), 5, 3, 2, 77, 1).unwrap();
        assert_eq!(sets.synth.records.len(), 5);
        assert_eq!(sets.pairs.records.len(), 3);
        assert_eq!(sets.test.records.len(), 2);
    }

    #[test]
    fn pair_records_are_aligned_and_unlabeled() {
        let sets = build_datasets(&small_cfg(), 2, 4, 2, 5, 1).unwrap();
        assert_eq!(sets.pairs.label_len, 0);
        for r in &sets.pairs.records {
            assert!(r.label.is_none(), "pair records must carry no label");
            // Both halves exist and came from one pose by construction;
            // the pose metadata is shared record state.
            assert!(r.color.is_some());
            assert_eq!(r.depth.len(), 24 * 24);
            assert_eq!(r.color.as_ref().unwrap().len(), 3 * 24 * 24);
            r.pose().validate().unwrap();
        }
        assert_eq!(sets.synth.label_len, 16);
        assert_eq!(sets.test.label_len, 16);
    }

    #[test]
    fn streams_are_disjoint_by_seed() {
        let sets = build_datasets(&small_cfg(), 20, 20, 20, 9, 1).unwrap();
        let mut seen = HashSet::new();
        for ds in [&sets.synth, &sets.pairs, &sets.test] {
            for r in &ds.records {
                assert!(seen.insert(r.seed), "duplicate sample seed {}", r.seed);
            }
        }
    }

    #[test]
    fn generation_is_identical_across_thread_counts() {
        let cfg = small_cfg();
        let a = build_datasets(&cfg, 9, 5, 3, 123, 1).unwrap();
        let b = build_datasets(&cfg, 9, 5, 3, 123, 4).unwrap();
        assert_eq!(a.synth.records, b.synth.records);
        assert_eq!(a.pairs.records, b.pairs.records);
        assert_eq!(a.test.records, b.test.records);
    }

    #[test]
    fn windows_are_normalized() {
        let sets = build_datasets(&small_cfg(), 3, 3, 1, 11, 1).unwrap();
        for ds in [&sets.synth, &sets.pairs, &sets.test] {
            for r in &ds.records {
                for v in &r.depth {
                    assert!((-1.0..=1.0).contains(v), "depth {v} out of [-1,1]");
                }
                if let Some(c) = &r.color {
                    for v in c {
                        assert!((-1.0..=1.0).contains(v), "color {v} out of [-1,1]");
                    }
                }
            }
        }
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("xmpd_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let sets = build_datasets(&small_cfg(), 3, 2, 2, 31, 1).unwrap();
        for (name, ds) in [
            ("synth", &sets.synth),
            ("pairs", &sets.pairs),
            ("test", &sets.test),
        ] {
            let path = dir.join(format!("{name}.xmpd"));
            write_dataset(ds, &path).unwrap();
            let back = read_dataset(&path).unwrap();
            assert_eq!(&back, ds);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn read_rejects_bad_magic() {
        let dir = std::env::temp_dir().join(format!("xmpd_bad_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.xmpd");
        std::fs::write(&path, b"NOPE0000").unwrap();
        assert!(matches!(
            read_dataset(&path),
            Err(SceneError::Malformed { .. })
        ));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hand_mode_generates_joint_labels() {
        let cfg = SceneConfig {
            mode: TaskMode::Hand,
            ..small_cfg()
        };
        let sets = build_datasets(&cfg, 2, 2, 1, 3, 1).unwrap();
        assert_eq!(sets.synth.label_len, 18);
        for r in &sets.synth.records {
            assert_eq!(r.label.as_ref().unwrap().len(), 18);
        }
    }
}
