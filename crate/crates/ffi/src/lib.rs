//! C interface to the simulator.
//!
//! Every function returns an [`IlsimStatus`]. Objects cross the boundary as
//! opaque handles that the caller releases with the matching `_free`
//! function. After a failure, `ilsim_last_error` copies a description of
//! the most recent error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ilsim::acre::AcreTask;
use ilsim::bayes::{entropy, posterior_update, BeliefState, LikelihoodModel};
use ilsim::runner::{cmd_run, ExperimentConfig, RunError};
use ilsim::signal;
use ilsim::space::{Example, FiniteSpace};
use ilsim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IlsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Contradiction = 4,
    Infeasible = 5,
    Config = 6,
    RunAborted = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// A finite hypothesis space.
pub struct IlsimSpace(FiniteSpace);

/// A normalized belief over a space.
pub struct IlsimBelief(BeliefState);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> IlsimStatus {
    match e {
        Error::Contradiction | Error::InconsistentExamples(_) => IlsimStatus::Contradiction,
        Error::InfeasibleEffectiveSet => IlsimStatus::Infeasible,
        Error::GenerationAborted { .. } => IlsimStatus::RunAborted,
        _ => IlsimStatus::Domain,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (IlsimStatus, String)>) -> IlsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IlsimStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            IlsimStatus::Panic
        }
    }
}

fn core(e: Error) -> (IlsimStatus, String) {
    (status_of(&e), e.to_string())
}

fn null() -> (IlsimStatus, String) {
    (IlsimStatus::NullPointer, "null pointer argument".into())
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, (IlsimStatus, String)> {
    if p.is_null() {
        return Err(null());
    }
    CStr::from_ptr(p).to_str().map_err(|_| (IlsimStatus::InvalidArgument, "string is not UTF-8".into()))
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), (IlsimStatus, String)> {
    if out.is_null() {
        return Err(null());
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message on this thread into `buf` (NUL
/// terminated, truncated to `len`) and returns its full length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ilsim_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ilsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The 256 mappings from four objects to four two-bit messages.
///
/// # Safety
/// `out` must be a valid pointer to write the handle into.
#[no_mangle]
pub unsafe extern "C" fn ilsim_signal_space_new(out: *mut *mut IlsimSpace) -> IlsimStatus {
    guard(|| write_handle(out, IlsimSpace(signal::signal_space())))
}

/// Rule space over `objects` objects (3^objects rules).
///
/// # Safety
/// `out` must be a valid pointer to write the handle into.
#[no_mangle]
pub unsafe extern "C" fn ilsim_acre_space_new(objects: usize, out: *mut *mut IlsimSpace) -> IlsimStatus {
    guard(|| {
        if objects == 0 || objects > 8 {
            return Err((IlsimStatus::InvalidArgument, format!("object count {objects} outside 1..=8")));
        }
        let task = AcreTask::lettered(objects).map_err(core)?;
        write_handle(out, IlsimSpace(task.space()))
    })
}

/// # Safety
/// `space` must be null or a handle from an `ilsim_*_space_new` call that
/// has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ilsim_space_free(space: *mut IlsimSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// # Safety
/// `space` must be a live handle and `hypotheses`, `inputs`, `outputs`
/// valid pointers.
#[no_mangle]
pub unsafe extern "C" fn ilsim_space_shape(
    space: *const IlsimSpace,
    hypotheses: *mut usize,
    inputs: *mut usize,
    outputs: *mut usize,
) -> IlsimStatus {
    guard(|| {
        if space.is_null() || hypotheses.is_null() || inputs.is_null() || outputs.is_null() {
            return Err(null());
        }
        let s = &(*space).0;
        *hypotheses = s.hypothesis_count();
        *inputs = s.input_count();
        *outputs = s.output_count();
        Ok(())
    })
}

/// Uniform belief over `space`.
///
/// # Safety
/// `space` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilsim_belief_uniform(space: *const IlsimSpace, out: *mut *mut IlsimBelief) -> IlsimStatus {
    guard(|| {
        if space.is_null() {
            return Err(null());
        }
        let s = &(*space).0;
        let b = BeliefState::uniform(s.id(), s.hypothesis_count()).map_err(core)?;
        write_handle(out, IlsimBelief(b))
    })
}

/// Coding-length prior over the signal space with divisor `c`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ilsim_belief_coding_prior(c: f64, out: *mut *mut IlsimBelief) -> IlsimStatus {
    guard(|| {
        let b = signal::coding_prior(&signal::enumerate_mappings(), c, &Default::default()).map_err(core)?;
        write_handle(out, IlsimBelief(b))
    })
}

/// Belief from `len` non-negative weights, normalized.
///
/// # Safety
/// `space` must be a live handle, `weights` must point to `len` doubles and
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilsim_belief_from_weights(
    space: *const IlsimSpace,
    weights: *const f64,
    len: usize,
    out: *mut *mut IlsimBelief,
) -> IlsimStatus {
    guard(|| {
        if space.is_null() || weights.is_null() {
            return Err(null());
        }
        let s = &(*space).0;
        if len != s.hypothesis_count() {
            return Err((
                IlsimStatus::InvalidArgument,
                format!("{len} weights for {} hypotheses", s.hypothesis_count()),
            ));
        }
        let w = std::slice::from_raw_parts(weights, len);
        let b = BeliefState::from_weights(s.id(), w).map_err(core)?;
        write_handle(out, IlsimBelief(b))
    })
}

/// # Safety
/// `belief` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ilsim_belief_free(belief: *mut IlsimBelief) {
    if !belief.is_null() {
        drop(Box::from_raw(belief));
    }
}

/// Copies the probabilities into `buf`, which must hold every hypothesis.
///
/// # Safety
/// `belief` must be a live handle and `buf` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ilsim_belief_probs(belief: *const IlsimBelief, buf: *mut f64, len: usize) -> IlsimStatus {
    guard(|| {
        if belief.is_null() || buf.is_null() {
            return Err(null());
        }
        let b = &(*belief).0;
        if len < b.len() {
            return Err((IlsimStatus::BufferTooSmall, format!("buffer holds {len}, need {}", b.len())));
        }
        let probs = b.probs();
        ptr::copy_nonoverlapping(probs.as_ptr(), buf, probs.len());
        Ok(())
    })
}

/// Entropy in nats.
///
/// # Safety
/// `belief` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn ilsim_belief_entropy(belief: *const IlsimBelief, out: *mut f64) -> IlsimStatus {
    guard(|| {
        if belief.is_null() || out.is_null() {
            return Err(null());
        }
        *out = entropy(&(*belief).0);
        Ok(())
    })
}

/// Posterior after `n` examples `(inputs[i], outputs[i])` under the noise
/// level `epsilon`. Writes a new handle; `prior` is left untouched.
///
/// # Safety
/// Handles must be live, `inputs` and `outputs` must point to `n` values
/// each (they may be null when `n` is 0), and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ilsim_posterior_update(
    prior: *const IlsimBelief,
    space: *const IlsimSpace,
    inputs: *const usize,
    outputs: *const usize,
    n: usize,
    epsilon: f64,
    out: *mut *mut IlsimBelief,
) -> IlsimStatus {
    guard(|| {
        if prior.is_null() || space.is_null() || (n > 0 && (inputs.is_null() || outputs.is_null())) {
            return Err(null());
        }
        let s = &(*space).0;
        let data: Vec<Example> = if n == 0 {
            Vec::new()
        } else {
            let xs = std::slice::from_raw_parts(inputs, n);
            let ys = std::slice::from_raw_parts(outputs, n);
            xs.iter().zip(ys).map(|(&x, &y)| Example::new(x, y)).collect()
        };
        let model = LikelihoodModel::for_space(epsilon, s).map_err(core)?;
        let post = posterior_update(&(*prior).0, &data, s, &model).map_err(core)?;
        write_handle(out, IlsimBelief(post))
    })
}

/// Runs a TOML experiment config and writes its artifacts to `out_dir`.
/// Relative paths in the config resolve against `base_dir`.
///
/// # Safety
/// All three arguments must be NUL-terminated UTF-8 strings.
#[no_mangle]
pub unsafe extern "C" fn ilsim_run_config(
    config_toml: *const c_char,
    base_dir: *const c_char,
    out_dir: *const c_char,
) -> IlsimStatus {
    guard(|| {
        let text = c_str(config_toml)?;
        let base = c_str(base_dir)?;
        let out = c_str(out_dir)?;
        let run = ExperimentConfig::from_toml(text).and_then(|cfg| cmd_run(&cfg, Path::new(base), Path::new(out)));
        run.map(|_| ()).map_err(|e| {
            let status = match &e {
                RunError::Config(_) => IlsimStatus::Config,
                RunError::Abort(_) => IlsimStatus::RunAborted,
                RunError::Io(_) => IlsimStatus::Io,
            };
            (status, e.to_string())
        })
    })
}
