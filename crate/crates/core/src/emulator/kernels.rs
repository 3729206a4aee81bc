//! Compute kernels: the inner work routines of the compute atom.
//!
//! Every kernel exposes the same contract: run `n` iterations, each a fixed
//! amount of arithmetic. Kernels differ in memory behaviour and therefore in
//! instruction rate, but not in how cycle targets are met.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::host;

pub const CACHE_RESIDENT: &str = "cache_resident";
pub const CACHE_EXCEEDING: &str = "cache_exceeding";

/// Edge of the matrices of the cache-resident kernel; three 24×24 f64
/// operands take 13.5 KiB and stay in a first-level data cache.
pub const RESIDENT_DIM: usize = 24;

pub trait Kernel: Send + Sync {
    fn name(&self) -> &str;
    /// Runs `iterations` iterations and returns a value that depends on all
    /// of them, so the work cannot be optimized away.
    fn run(&self, iterations: u64) -> f64;
    /// Floating-point operations per iteration, known from the arithmetic.
    fn flops_per_iteration(&self) -> u64;
    /// How a separate worker process can rebuild this kernel.
    fn spec(&self) -> String;
}

/// One iteration is a full 24×24 by 24×24 dense matrix multiply-accumulate.
#[derive(Debug, Default)]
pub struct CacheResident;

impl Kernel for CacheResident {
    fn name(&self) -> &str {
        CACHE_RESIDENT
    }

    fn run(&self, iterations: u64) -> f64 {
        const N: usize = RESIDENT_DIM;
        let mut a = [[0f64; N]; N];
        let mut b = [[0f64; N]; N];
        let mut c = [[0f64; N]; N];
        for i in 0..N {
            for j in 0..N {
                a[i][j] = 1.0 + ((i * N + j) % 7) as f64 * 0.125;
                b[i][j] = 1.0 - ((i + 3 * j) % 5) as f64 * 0.0625;
            }
        }
        for _ in 0..iterations {
            let a = std::hint::black_box(&a);
            for i in 0..N {
                for k in 0..N {
                    let aik = a[i][k];
                    for j in 0..N {
                        c[i][j] += aik * b[k][j];
                    }
                }
            }
            std::hint::black_box(&mut c);
        }
        c.iter().flatten().sum()
    }

    fn flops_per_iteration(&self) -> u64 {
        2 * (RESIDENT_DIM as u64).pow(3)
    }

    fn spec(&self) -> String {
        CACHE_RESIDENT.into()
    }
}

/// Multiplies a matrix several times larger than the last-level cache by
/// itself; one iteration computes one output element, walking a row
/// sequentially and a column with a full-row stride.
#[derive(Debug)]
pub struct CacheExceeding {
    dim: usize,
    data: Vec<f64>,
    cursor: std::sync::atomic::AtomicU64,
}

impl CacheExceeding {
    /// Sizes the matrix to at least four times the last-level cache.
    pub fn for_host() -> Self {
        let (_, llc) = host::cache_sizes();
        Self::with_min_bytes(4 * llc.max(8 << 20))
    }

    pub fn with_min_bytes(bytes: usize) -> Self {
        let dim = ((bytes / 8) as f64).sqrt().ceil() as usize;
        let data = (0..dim * dim).map(|i| 1.0 + (i % 11) as f64 * 0.03125).collect();
        CacheExceeding { dim, data, cursor: Default::default() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

impl Kernel for CacheExceeding {
    fn name(&self) -> &str {
        CACHE_EXCEEDING
    }

    fn run(&self, iterations: u64) -> f64 {
        let n = self.dim;
        let m = &self.data;
        // Concurrent callers start at different output elements.
        let start = self.cursor.fetch_add(iterations, std::sync::atomic::Ordering::Relaxed);
        let mut total = 0.0;
        for it in 0..iterations {
            let e = (start + it) as usize % (n * n);
            // Step through columns fastest so consecutive iterations touch
            // different cache lines of the strided operand.
            let (col, row) = (e % n, (e / n * 7919) % n);
            let r = &m[row * n..(row + 1) * n];
            let mut acc = 0.0;
            for k in 0..n {
                acc += r[k] * m[k * n + col];
            }
            total += std::hint::black_box(acc);
        }
        total
    }

    fn flops_per_iteration(&self) -> u64 {
        2 * self.dim as u64
    }

    fn spec(&self) -> String {
        CACHE_EXCEEDING.into()
    }
}

type IterFn = unsafe extern "C" fn(u64);
type FlopsFn = unsafe extern "C" fn() -> u64;

/// A user-supplied kernel in a shared library exporting
/// `synmirror_kernel_iterations(uint64_t n)` and
/// `uint64_t synmirror_kernel_flops_per_iteration(void)`.
pub struct PluginKernel {
    name: String,
    path: PathBuf,
    iterations: IterFn,
    flops: u64,
    _lib: libloading::Library,
}

impl std::fmt::Debug for PluginKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PluginKernel").field("name", &self.name).field("path", &self.path).finish()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum KernelError {
    #[error("compute kernel plugin {name:?} not found (looked for {})", .searched.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    NotFound { name: String, searched: Vec<PathBuf> },
    #[error("cannot load kernel plugin {path}: {message}")]
    Load { path: String, message: String },
}

/// Candidate library paths for plugin `name` inside `dir`.
pub fn plugin_candidates(name: &str, dir: &Path) -> Vec<PathBuf> {
    vec![dir.join(format!("lib{name}.so")), dir.join(format!("{name}.so"))]
}

impl PluginKernel {
    pub fn load_path(name: &str, path: &Path) -> Result<Self, KernelError> {
        let load_err =
            |e: libloading::Error| KernelError::Load { path: path.display().to_string(), message: e.to_string() };
        // SAFETY: loading a user-designated kernel library; its initializers
        // run with the same trust as the user's own command.
        let lib = unsafe { libloading::Library::new(path) }.map_err(load_err)?;
        // SAFETY: symbol types are part of the documented plugin contract.
        let (iterations, flops_fn) = unsafe {
            let it: libloading::Symbol<IterFn> = lib.get(b"synmirror_kernel_iterations\0").map_err(load_err)?;
            let fl: libloading::Symbol<FlopsFn> =
                lib.get(b"synmirror_kernel_flops_per_iteration\0").map_err(load_err)?;
            (*it, *fl)
        };
        // SAFETY: calling the plugin's declared entry point.
        let flops = unsafe { flops_fn() };
        Ok(PluginKernel { name: name.to_string(), path: path.to_path_buf(), iterations, flops, _lib: lib })
    }

    /// Looks `name` up as `lib<name>.so` or `<name>.so` in `dir`.
    pub fn load(name: &str, dir: &Path) -> Result<Self, KernelError> {
        let searched = plugin_candidates(name, dir);
        match searched.iter().find(|p| p.is_file()) {
            Some(p) => Self::load_path(name, p),
            None => Err(KernelError::NotFound { name: name.to_string(), searched }),
        }
    }
}

impl Kernel for PluginKernel {
    fn name(&self) -> &str {
        &self.name
    }

    fn run(&self, iterations: u64) -> f64 {
        // SAFETY: plugin contract; the library stays loaded while self lives.
        unsafe { (self.iterations)(iterations) };
        0.0
    }

    fn flops_per_iteration(&self) -> u64 {
        self.flops
    }

    fn spec(&self) -> String {
        format!("plugin:{}={}", self.name, self.path.display())
    }
}

/// Plugin directory from `SYNMIRROR_PLUGIN_DIR`, else `<data dir>/kernels`.
pub fn default_plugin_dir() -> PathBuf {
    std::env::var_os("SYNMIRROR_PLUGIN_DIR")
        .filter(|s| !s.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| crate::store::default_dir().join("kernels"))
}

/// Builds a kernel by name: a built-in, or a plugin from `plugin_dir`.
pub fn kernel_by_name(name: &str, plugin_dir: &Path) -> Result<Arc<dyn Kernel>, KernelError> {
    match name {
        CACHE_RESIDENT => Ok(Arc::new(CacheResident)),
        CACHE_EXCEEDING => Ok(Arc::new(CacheExceeding::for_host())),
        _ => Ok(Arc::new(PluginKernel::load(name, plugin_dir)?)),
    }
}

/// Rebuilds a kernel from [`Kernel::spec`].
pub fn kernel_from_spec(spec: &str) -> Result<Arc<dyn Kernel>, KernelError> {
    if let Some(rest) = spec.strip_prefix("plugin:") {
        let (name, path) = rest.split_once('=').unwrap_or((rest, rest));
        return Ok(Arc::new(PluginKernel::load_path(name, Path::new(path))?));
    }
    kernel_by_name(spec, Path::new("."))
}
