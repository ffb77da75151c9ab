//! C ABI for the elicit toolkit.
//!
//! Objects are opaque handles returned through out-parameters and released
//! with the matching `_free`. Every fallible call returns an
//! [`ElicitStatus`]; on failure a message is available from
//! [`elicit_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use elicit::family::{self, FamilyError, SeparatingFamily};
use elicit::properties::{PropertyError, PropertySpec};
use elicit::quasimono;
use elicit::scoring::{self, ScoringError, ScoringRule, Weight};
use elicit::separator::{self, SeparationError, SeparatorConfig};
use elicit::simplex::{self, NormSpec, OutcomeSpace, SimplexError};
use elicit::Tolerances;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElicitStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    OutOfRange = 4,
    /// The property failed a structural condition while separating.
    Separation = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Property `Gamma` on a finite simplex.
pub struct ElicitProperty {
    inner: PropertySpec,
}

/// Separating functionals on a grid of levels.
pub struct ElicitFamily {
    inner: SeparatingFamily,
}

/// Scoring table synthesized from a family.
pub struct ElicitScoringRule {
    inner: ScoringRule,
}

/// Evaluator for custom properties: `weights` has `n` entries summing to 1.
pub type ElicitPropertyFn =
    Option<extern "C" fn(weights: *const f64, n: usize, user_data: *mut c_void) -> f64>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn fail(status: ElicitStatus, msg: impl Into<String>) -> ElicitStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> ElicitStatus) -> ElicitStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(ElicitStatus::Panic, msg)
        }
    }
}

fn property_status(e: &PropertyError) -> ElicitStatus {
    match e {
        PropertyError::LevelOutOfRange { .. } => ElicitStatus::OutOfRange,
        PropertyError::Json(_) | PropertyError::CustomInJson => ElicitStatus::Parse,
        _ => ElicitStatus::InvalidArgument,
    }
}

fn separation_status(e: &SeparationError) -> ElicitStatus {
    match e {
        _ if e.is_range_error() => ElicitStatus::OutOfRange,
        SeparationError::Property(p) => property_status(p),
        SeparationError::Simplex(_) => ElicitStatus::InvalidArgument,
        _ => ElicitStatus::Separation,
    }
}

fn family_status(e: &FamilyError) -> ElicitStatus {
    match e {
        FamilyError::GridTooSmall(_) | FamilyError::TooFewRefinements(_) => ElicitStatus::InvalidArgument,
        FamilyError::Property(p) => property_status(p),
        FamilyError::AtLevel { source, .. } | FamilyError::Separation(source) => separation_status(source),
    }
}

fn scoring_status(e: &ScoringError) -> ElicitStatus {
    match e {
        ScoringError::BaseLevelOutOfRange { .. } => ElicitStatus::OutOfRange,
        _ => ElicitStatus::InvalidArgument,
    }
}

fn simplex_status(e: &SimplexError) -> ElicitStatus {
    fail(ElicitStatus::InvalidArgument, e.to_string())
}

fn norm(p: f64) -> Result<NormSpec, ElicitStatus> {
    NormSpec::new(p).map_err(|e| simplex_status(&e))
}

fn config(p: f64, seed: u64) -> Result<SeparatorConfig, ElicitStatus> {
    Ok(SeparatorConfig::default().with_norm(norm(p)?).with_seed(seed))
}

unsafe fn weights<'a>(w: *const f64, n: usize, expected: usize) -> Result<&'a [f64], ElicitStatus> {
    if w.is_null() {
        return Err(fail(ElicitStatus::NullPointer, "weights pointer is null"));
    }
    if n != expected {
        return Err(fail(
            ElicitStatus::InvalidArgument,
            format!("expected {expected} weights, got {n}"),
        ));
    }
    let w = std::slice::from_raw_parts(w, n);
    simplex::make_distribution(w.to_vec()).map_err(|e| simplex_status(&e))?;
    Ok(w)
}

macro_rules! deref {
    ($ptr:expr, $what:literal) => {
        match $ptr.as_ref() {
            Some(v) => v,
            None => return fail(ElicitStatus::NullPointer, concat!($what, " is null")),
        }
    };
}

macro_rules! out {
    ($ptr:expr, $what:literal) => {
        if $ptr.is_null() {
            return fail(ElicitStatus::NullPointer, concat!($what, " is null"));
        }
    };
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next `elicit_*` call on the same thread.
#[no_mangle]
pub extern "C" fn elicit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a property from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_property_from_json(
    json: *const c_char,
    out: *mut *mut ElicitProperty,
) -> ElicitStatus {
    guard(|| {
        out!(out, "out");
        out!(json, "json");
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(e) => return fail(ElicitStatus::Parse, e.to_string()),
        };
        match PropertySpec::from_json(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ElicitProperty { inner }));
                ElicitStatus::Ok
            }
            Err(e) => fail(property_status(&e), e.to_string()),
        }
    })
}

struct Callback {
    f: extern "C" fn(*const f64, usize, *mut c_void) -> f64,
    user_data: *mut c_void,
}

// The caller promises in `elicit_property_custom` that the callback may be
// invoked concurrently.
unsafe impl Send for Callback {}
unsafe impl Sync for Callback {}

/// Wraps a C evaluator as a property on `n` outcomes.
///
/// # Safety
/// `id` must be a NUL-terminated string; `out` must be writable. `f` must
/// be safe to call from several threads at once with `user_data`, which
/// must outlive the returned handle and every family built from it.
#[no_mangle]
pub unsafe extern "C" fn elicit_property_custom(
    id: *const c_char,
    n: usize,
    f: ElicitPropertyFn,
    user_data: *mut c_void,
    out: *mut *mut ElicitProperty,
) -> ElicitStatus {
    guard(|| {
        out!(out, "out");
        out!(id, "id");
        let Some(f) = f else {
            return fail(ElicitStatus::NullPointer, "evaluator is null");
        };
        let space = match OutcomeSpace::new(n) {
            Ok(s) => s,
            Err(e) => return simplex_status(&e),
        };
        let id = CStr::from_ptr(id).to_string_lossy().into_owned();
        let cb = Callback { f, user_data };
        let inner = PropertySpec::custom(id, space, move |w: &[f64]| {
            let cb = &cb;
            (cb.f)(w.as_ptr(), w.len(), cb.user_data)
        });
        *out = Box::into_raw(Box::new(ElicitProperty { inner }));
        ElicitStatus::Ok
    })
}

/// # Safety
/// `prop` must be null or a handle from a property constructor, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn elicit_property_free(prop: *mut ElicitProperty) {
    if !prop.is_null() {
        drop(Box::from_raw(prop));
    }
}

/// Number of outcomes, or 0 for a null handle.
///
/// # Safety
/// `prop` must be null or a live property handle.
#[no_mangle]
pub unsafe extern "C" fn elicit_property_dim(prop: *const ElicitProperty) -> usize {
    prop.as_ref().map_or(0, |p| p.inner.dim())
}

/// # Safety
/// `prop` must be a live handle, `w` must point to `n` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_property_eval(
    prop: *const ElicitProperty,
    w: *const f64,
    n: usize,
    out: *mut f64,
) -> ElicitStatus {
    guard(|| {
        let prop = deref!(prop, "property");
        out!(out, "out");
        let w = tri!(weights(w, n, prop.inner.dim()));
        *out = prop.inner.eval_weights(w);
        ElicitStatus::Ok
    })
}

/// Image interval `[lo, hi]` of the property over the simplex.
///
/// # Safety
/// `prop` must be a live handle; `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_property_image(
    prop: *const ElicitProperty,
    lo: *mut f64,
    hi: *mut f64,
) -> ElicitStatus {
    guard(|| {
        let prop = deref!(prop, "property");
        out!(lo, "lo");
        out!(hi, "hi");
        match prop.inner.image_interval() {
            Ok(i) => {
                *lo = i.lo;
                *hi = i.hi;
                ElicitStatus::Ok
            }
            Err(e) => fail(property_status(&e), e.to_string()),
        }
    })
}

/// Separating functional at level `r` under the `l_p` norm (`p` may be
/// `INFINITY`). Writes `n` entries to `z` and the level-set residual to
/// `residual` when non-null.
///
/// # Safety
/// `prop` must be a live handle; `z` must have room for `n` doubles;
/// `residual` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_separate(
    prop: *const ElicitProperty,
    r: f64,
    p: f64,
    seed: u64,
    z: *mut f64,
    n: usize,
    residual: *mut f64,
) -> ElicitStatus {
    guard(|| {
        let prop = deref!(prop, "property");
        out!(z, "z");
        if n < prop.inner.dim() {
            return fail(
                ElicitStatus::BufferTooSmall,
                format!("z needs {} entries", prop.inner.dim()),
            );
        }
        let cfg = tri!(config(p, seed));
        match separator::separate(&prop.inner, r, &cfg) {
            Ok(f) => {
                std::slice::from_raw_parts_mut(z, f.z.len()).copy_from_slice(&f.z);
                if !residual.is_null() {
                    *residual = f.residual;
                }
                ElicitStatus::Ok
            }
            Err(e) => fail(separation_status(&e), e.to_string()),
        }
    })
}

/// Runs the randomized segment-monotonicity check. `passed` receives 1 if
/// no violation was found and 0 otherwise.
///
/// # Safety
/// `prop` must be a live handle; `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_check_quasi_monotone(
    prop: *const ElicitProperty,
    trials: usize,
    seed: u64,
    passed: *mut i32,
) -> ElicitStatus {
    guard(|| {
        let prop = deref!(prop, "property");
        out!(passed, "passed");
        let tol = Tolerances::default();
        match quasimono::check_quasi_monotone(&prop.inner, trials, quasimono::DEFAULT_GRID, seed, &tol) {
            Ok(rep) => {
                *passed = rep.passed() as i32;
                ElicitStatus::Ok
            }
            Err(e) => fail(ElicitStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Separating family on `grid_size` evenly spaced interior levels.
///
/// # Safety
/// `prop` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_family_build(
    prop: *const ElicitProperty,
    grid_size: usize,
    p: f64,
    seed: u64,
    out: *mut *mut ElicitFamily,
) -> ElicitStatus {
    guard(|| {
        let prop = deref!(prop, "property");
        out!(out, "out");
        let cfg = tri!(config(p, seed));
        match family::build_family(&prop.inner, grid_size, &cfg) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ElicitFamily { inner }));
                ElicitStatus::Ok
            }
            Err(e) => fail(family_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `fam` must be null or a handle from [`elicit_family_build`], not yet freed.
#[no_mangle]
pub unsafe extern "C" fn elicit_family_free(fam: *mut ElicitFamily) {
    if !fam.is_null() {
        drop(Box::from_raw(fam));
    }
}

/// Number of levels, or 0 for a null handle.
///
/// # Safety
/// `fam` must be null or a live family handle.
#[no_mangle]
pub unsafe extern "C" fn elicit_family_len(fam: *const ElicitFamily) -> usize {
    fam.as_ref().map_or(0, |f| f.inner.len())
}

/// Number of outcomes, or 0 for a null handle.
///
/// # Safety
/// `fam` must be null or a live family handle.
#[no_mangle]
pub unsafe extern "C" fn elicit_family_dim(fam: *const ElicitFamily) -> usize {
    fam.as_ref().map_or(0, |f| f.inner.property().dim())
}

/// Level `k` and its functional (`n` entries written to `z`).
///
/// # Safety
/// `fam` must be a live handle; `r` must be writable; `z` must have room
/// for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn elicit_family_level(
    fam: *const ElicitFamily,
    k: usize,
    r: *mut f64,
    z: *mut f64,
    n: usize,
) -> ElicitStatus {
    guard(|| {
        let fam = deref!(fam, "family");
        out!(r, "r");
        out!(z, "z");
        let Some(f) = fam.inner.functionals.get(k) else {
            return fail(
                ElicitStatus::OutOfRange,
                format!("level index {k} >= {}", fam.inner.len()),
            );
        };
        if n < f.z.len() {
            return fail(
                ElicitStatus::BufferTooSmall,
                format!("z needs {} entries", f.z.len()),
            );
        }
        *r = f.r;
        std::slice::from_raw_parts_mut(z, f.z.len()).copy_from_slice(&f.z);
        ElicitStatus::Ok
    })
}

/// Integrates the family with unit weight, anchored at the grid node
/// nearest to `r0` (pass NaN for the middle of the grid).
///
/// # Safety
/// `fam` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_scoring_synthesize(
    fam: *const ElicitFamily,
    r0: f64,
    out: *mut *mut ElicitScoringRule,
) -> ElicitStatus {
    guard(|| {
        let fam = deref!(fam, "family");
        out!(out, "out");
        let r0 = (!r0.is_nan()).then_some(r0);
        match scoring::synthesize(&fam.inner, &Weight::Constant(1.0), r0) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ElicitScoringRule { inner }));
                ElicitStatus::Ok
            }
            Err(e) => fail(scoring_status(&e), e.to_string()),
        }
    })
}

/// # Safety
/// `rule` must be null or a handle from [`elicit_scoring_synthesize`], not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn elicit_scoring_free(rule: *mut ElicitScoringRule) {
    if !rule.is_null() {
        drop(Box::from_raw(rule));
    }
}

/// Expected score `E_P S(r, Y)` at the grid node nearest to `r`.
///
/// # Safety
/// `rule` must be a live handle; `w` must point to `n` doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_scoring_expected(
    rule: *const ElicitScoringRule,
    w: *const f64,
    n: usize,
    r: f64,
    out: *mut f64,
) -> ElicitStatus {
    guard(|| {
        let rule = deref!(rule, "scoring rule");
        out!(out, "out");
        let dim = rule.inner.table.first().map_or(0, Vec::len);
        let w = tri!(weights(w, n, dim));
        let p = simplex::make_distribution(w.to_vec()).expect("validated");
        *out = scoring::expected_score(&rule.inner, &p, r);
        ElicitStatus::Ok
    })
}

/// Grid level minimizing the expected score under `w`.
///
/// # Safety
/// `rule` must be a live handle; `w` must point to `n` doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn elicit_scoring_argmin(
    rule: *const ElicitScoringRule,
    w: *const f64,
    n: usize,
    out: *mut f64,
) -> ElicitStatus {
    guard(|| {
        let rule = deref!(rule, "scoring rule");
        out!(out, "out");
        let dim = rule.inner.table.first().map_or(0, Vec::len);
        let w = tri!(weights(w, n, dim));
        let p = simplex::make_distribution(w.to_vec()).expect("validated");
        *out = rule.inner.levels[rule.inner.argmin(&p)];
        ElicitStatus::Ok
    })
}
