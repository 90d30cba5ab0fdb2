//! C ABI for the lmbreak toolkit.
//!
//! Conventions: objects cross the boundary as opaque handles that must be
//! released with their `_free` function; fallible calls return [`LbStatus`]
//! and write results through out-pointers; functions returning pointers
//! return NULL on failure. The most recent error message of the calling
//! thread is available via [`lb_last_error_message`]. Handles are safe to
//! share across threads for read-only use.

use lmbreak::attack::{AttackConfig, BudgetMode, Variant};
use lmbreak::extractor::{decode_landmarks, Checkpoint};
use lmbreak::faces::{render_face, sample_face_params};
use lmbreak::landmarks::Schema;
use lmbreak::metrics::{landmark_roi, mask_ssim, nme, ssim};
use lmbreak::tensor::Tensor;
use lmbreak::{Error, ImageTensor, Result};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;

/// Status codes returned by fallible C API calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbStatus {
    LbOk = 0,
    LbNullArgument = 1,
    LbInvalidArgument = 2,
    LbIoError = 3,
    LbShapeMismatch = 4,
    LbNumericError = 5,
    LbInternalError = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized: String = msg.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(sanitized).unwrap());
}

fn status_of(err: &Error) -> LbStatus {
    match err {
        Error::Io { .. } | Error::Image(_) | Error::Codec { .. } => LbStatus::LbIoError,
        Error::ShapeMismatch { .. } => LbStatus::LbShapeMismatch,
        Error::NonFinite(_) | Error::Divergence { .. } | Error::DegenerateGeometry(_) => {
            LbStatus::LbNumericError
        }
        Error::InvalidConfig(_) | Error::SizeTooSmall { .. } | Error::EmptyDataset(_) => {
            LbStatus::LbInvalidArgument
        }
        _ => LbStatus::LbInternalError,
    }
}

fn fail(err: Error) -> LbStatus {
    let code = status_of(&err);
    set_error(&err.to_string());
    code
}

/// Last error message recorded on this thread. The pointer stays valid
/// until the next failing call on the same thread. Never NULL.
#[no_mangle]
pub extern "C" fn lb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque image handle (H×W, 3 channels, pixel values in [0, 255]).
pub struct LbImage(ImageTensor);

/// Opaque trained-extractor handle.
pub struct LbCheckpoint(Checkpoint);

/// Opaque attack result handle.
pub struct LbAttackResult(lmbreak::attack::AttackResult);

/// Attack configuration, mirrored as a plain C struct.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LbAttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub max_iters: usize,
    pub momentum_decay: f64,
    /// 0 = LB, 1 = FGSM, 2 = IFGSM, 3 = LB_trans, 4 = LB_mix.
    pub variant: i32,
    /// 0 = project, 1 = literal.
    pub budget_mode: i32,
    pub seed: u64,
}

fn convert_config(c: &LbAttackConfig) -> Result<AttackConfig> {
    let variant = match c.variant {
        0 => Variant::LB,
        1 => Variant::FGSM,
        2 => Variant::IFGSM,
        3 => Variant::LBTrans,
        4 => Variant::LBMix,
        v => return Err(Error::InvalidConfig(format!("unknown variant code {v}"))),
    };
    let budget_mode = match c.budget_mode {
        0 => BudgetMode::Project,
        1 => BudgetMode::Literal,
        v => return Err(Error::InvalidConfig(format!("unknown budget mode code {v}"))),
    };
    let cfg = AttackConfig {
        epsilon: c.epsilon,
        alpha: c.alpha,
        max_iters: c.max_iters,
        momentum_decay: c.momentum_decay,
        variant,
        budget_mode,
        seed: c.seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Default attack configuration (ε=15, α=1, T=20, λ=0.5, LB, project).
#[no_mangle]
pub extern "C" fn lb_attack_config_default() -> LbAttackConfig {
    let d = AttackConfig::default();
    LbAttackConfig {
        epsilon: d.epsilon,
        alpha: d.alpha,
        max_iters: d.max_iters,
        momentum_decay: d.momentum_decay,
        variant: 0,
        budget_mode: 0,
        seed: d.seed,
    }
}

unsafe fn path_from(ptr: *const c_char) -> Result<PathBuf> {
    if ptr.is_null() {
        return Err(Error::InvalidConfig("null path".into()));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Error::InvalidConfig(format!("non-utf8 path: {e}")))?;
    Ok(PathBuf::from(s))
}

// ---------------------------------------------------------------- images

/// Build an image from interleaved RGB bytes (row-major, `h*w*3` bytes).
///
/// # Safety
/// `rgb` must point to at least `h*w*3` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn lb_image_from_rgb8(rgb: *const u8, h: usize, w: usize) -> *mut LbImage {
    if rgb.is_null() || h == 0 || w == 0 {
        set_error("lb_image_from_rgb8: null or empty input");
        return std::ptr::null_mut();
    }
    let bytes = std::slice::from_raw_parts(rgb, h * w * 3);
    Box::into_raw(Box::new(LbImage(Tensor::from_rgb8(bytes, h, w))))
}

/// Load a PNG file as an RGB image.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lb_image_load_png(path: *const c_char) -> *mut LbImage {
    let result = path_from(path).and_then(|p| Tensor::load_png(&p));
    match result {
        Ok(t) => Box::into_raw(Box::new(LbImage(t))),
        Err(e) => {
            fail(e);
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `img` must be a live handle from this library; `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn lb_image_save_png(img: *const LbImage, path: *const c_char) -> LbStatus {
    let Some(img) = img.as_ref() else {
        set_error("lb_image_save_png: null image");
        return LbStatus::LbNullArgument;
    };
    match path_from(path).and_then(|p| img.0.save_png(&p)) {
        Ok(()) => LbStatus::LbOk,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `img` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_image_height(img: *const LbImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.height())
}

/// # Safety
/// `img` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_image_width(img: *const LbImage) -> usize {
    img.as_ref().map_or(0, |i| i.0.width())
}

/// Copy the image out as interleaved RGB bytes (values rounded/clamped).
/// `buf_len` must be at least `h*w*3`.
///
/// # Safety
/// `img` must be a live handle; `buf` must point to `buf_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn lb_image_to_rgb8(
    img: *const LbImage,
    buf: *mut u8,
    buf_len: usize,
) -> LbStatus {
    let Some(img) = img.as_ref() else {
        set_error("lb_image_to_rgb8: null image");
        return LbStatus::LbNullArgument;
    };
    let need = img.0.height() * img.0.width() * 3;
    if buf.is_null() || buf_len < need {
        set_error(&format!("lb_image_to_rgb8: buffer needs {need} bytes"));
        return LbStatus::LbInvalidArgument;
    }
    let bytes = img.0.to_rgb8();
    std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf, need);
    LbStatus::LbOk
}

/// # Safety
/// `img` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_image_free(img: *mut LbImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

/// Number of landmarks in the standard schema (also the heat-map count).
#[no_mangle]
pub extern "C" fn lb_landmark_count() -> usize {
    Schema::standard13().len()
}

/// Render the deterministic synthetic face for `seed` at `h`×`w` and write
/// its 2k ground-truth coordinates (x0,y0,x1,y1,...) to `out_xy` when it is
/// non-NULL.
///
/// # Safety
/// `out_xy`, if non-NULL, must point to `2 * lb_landmark_count()` writable f64.
#[no_mangle]
pub unsafe extern "C" fn lb_render_face(
    seed: u64,
    h: usize,
    w: usize,
    out_xy: *mut f64,
) -> *mut LbImage {
    let params = sample_face_params(seed);
    match render_face(&params, (h, w)) {
        Ok((img, lms)) => {
            if !out_xy.is_null() {
                for (i, p) in lms.coords().iter().enumerate() {
                    *out_xy.add(2 * i) = p[0];
                    *out_xy.add(2 * i + 1) = p[1];
                }
            }
            Box::into_raw(Box::new(LbImage(img)))
        }
        Err(e) => {
            fail(e);
            std::ptr::null_mut()
        }
    }
}

// ----------------------------------------------------------- checkpoints

/// Load an extractor checkpoint archive.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lb_checkpoint_load(path: *const c_char) -> *mut LbCheckpoint {
    match path_from(path).and_then(|p| Checkpoint::load(&p)) {
        Ok(c) => Box::into_raw(Box::new(LbCheckpoint(c))),
        Err(e) => {
            fail(e);
            std::ptr::null_mut()
        }
    }
}

/// Architecture name of a loaded checkpoint ("hourglass-mini" etc.).
/// Returns a pointer into static storage; do not free.
///
/// # Safety
/// `ckpt` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_checkpoint_arch_name(ckpt: *const LbCheckpoint) -> *const c_char {
    match ckpt.as_ref() {
        Some(c) => match c.0.spec.arch.name() {
            "hourglass-mini" => c"hourglass-mini".as_ptr(),
            "hires-parallel-mini" => c"hires-parallel-mini".as_ptr(),
            _ => c"encdec-mini".as_ptr(),
        },
        None => std::ptr::null(),
    }
}

/// # Safety
/// `ckpt` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_checkpoint_free(ckpt: *mut LbCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Run the extractor and decode landmarks into `out_xy` (x,y pairs, image
/// coordinates). `cap` is the capacity of `out_xy` in f64 values; it must be
/// at least `2 * lb_landmark_count()`.
///
/// # Safety
/// `ckpt`/`img` must be live handles; `out_xy` must have `cap` writable f64.
#[no_mangle]
pub unsafe extern "C" fn lb_extract_landmarks(
    ckpt: *const LbCheckpoint,
    img: *const LbImage,
    out_xy: *mut f64,
    cap: usize,
) -> LbStatus {
    let (Some(ckpt), Some(img)) = (ckpt.as_ref(), img.as_ref()) else {
        set_error("lb_extract_landmarks: null argument");
        return LbStatus::LbNullArgument;
    };
    let schema = Schema::standard13();
    if out_xy.is_null() || cap < 2 * schema.len() {
        set_error(&format!(
            "lb_extract_landmarks: out_xy needs capacity {}",
            2 * schema.len()
        ));
        return LbStatus::LbInvalidArgument;
    }
    let run = || -> Result<Vec<[f64; 2]>> {
        let maps = ckpt.0.forward(&img.0)?;
        let size = (img.0.height(), img.0.width());
        Ok(decode_landmarks(&maps, size, schema.clone())?.coords().to_vec())
    };
    match run() {
        Ok(coords) => {
            for (i, p) in coords.iter().enumerate() {
                *out_xy.add(2 * i) = p[0];
                *out_xy.add(2 * i + 1) = p[1];
            }
            LbStatus::LbOk
        }
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------- attacks

/// Craft an adversarial image. Returns NULL on failure.
///
/// # Safety
/// `ckpt` and `img` must be live handles; `cfg` may be NULL for defaults.
#[no_mangle]
pub unsafe extern "C" fn lb_attack_run(
    ckpt: *const LbCheckpoint,
    img: *const LbImage,
    cfg: *const LbAttackConfig,
) -> *mut LbAttackResult {
    let (Some(ckpt), Some(img)) = (ckpt.as_ref(), img.as_ref()) else {
        set_error("lb_attack_run: null argument");
        return std::ptr::null_mut();
    };
    let config = match cfg.as_ref() {
        Some(c) => match convert_config(c) {
            Ok(c) => c,
            Err(e) => {
                fail(e);
                return std::ptr::null_mut();
            }
        },
        None => AttackConfig::default(),
    };
    match lmbreak::attack::run_attack(&ckpt.0, &img.0, &config) {
        Ok(res) => Box::into_raw(Box::new(LbAttackResult(res))),
        Err(e) => {
            fail(e);
            std::ptr::null_mut()
        }
    }
}

/// Copy of the adversarial image held by an attack result.
///
/// # Safety
/// `res` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lb_attack_result_image(res: *const LbAttackResult) -> *mut LbImage {
    match res.as_ref() {
        Some(r) => Box::into_raw(Box::new(LbImage(r.0.adversarial.clone()))),
        None => {
            set_error("lb_attack_result_image: null result");
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `res` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_attack_result_iterations(res: *const LbAttackResult) -> usize {
    res.as_ref().map_or(0, |r| r.0.iterations)
}

/// # Safety
/// `res` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_attack_result_linf_dev(res: *const LbAttackResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.0.linf_dev)
}

/// # Safety
/// `res` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_attack_result_final_loss(res: *const LbAttackResult) -> f64 {
    res.as_ref().map_or(f64::NAN, |r| r.0.final_loss)
}

/// Copy up to `cap` loss-trace entries into `out`; returns the number of
/// entries the full trace holds.
///
/// # Safety
/// `res` must be a live handle; `out`, if non-NULL, must have `cap` writable
/// f64.
#[no_mangle]
pub unsafe extern "C" fn lb_attack_result_loss_trace(
    res: *const LbAttackResult,
    out: *mut f64,
    cap: usize,
) -> usize {
    let Some(r) = res.as_ref() else { return 0 };
    if !out.is_null() {
        for (i, v) in r.0.loss_trace.iter().take(cap).enumerate() {
            *out.add(i) = *v;
        }
    }
    r.0.loss_trace.len()
}

/// # Safety
/// `res` must be a handle from this library, not yet freed, or NULL.
#[no_mangle]
pub unsafe extern "C" fn lb_attack_result_free(res: *mut LbAttackResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

// ---------------------------------------------------------------- metrics

/// NME of predicted vs ground-truth coordinates (standard 13-point schema;
/// `k` must equal `lb_landmark_count()`).
///
/// # Safety
/// `pred_xy` and `gt_xy` must point to `2k` readable f64 each; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lb_nme(
    pred_xy: *const f64,
    gt_xy: *const f64,
    k: usize,
    out: *mut f64,
) -> LbStatus {
    let schema = Schema::standard13();
    if pred_xy.is_null() || gt_xy.is_null() || out.is_null() {
        set_error("lb_nme: null argument");
        return LbStatus::LbNullArgument;
    }
    if k != schema.len() {
        set_error(&format!("lb_nme: k must be {}", schema.len()));
        return LbStatus::LbInvalidArgument;
    }
    let to_set = |ptr: *const f64| -> Result<lmbreak::landmarks::LandmarkSet> {
        let coords = (0..k)
            .map(|i| [*ptr.add(2 * i), *ptr.add(2 * i + 1)])
            .collect();
        lmbreak::landmarks::LandmarkSet::new(schema.clone(), coords)
    };
    let run = || -> Result<f64> { nme(&to_set(pred_xy)?, &to_set(gt_xy)?) };
    match run() {
        Ok(v) => {
            *out = v;
            LbStatus::LbOk
        }
        Err(e) => fail(e),
    }
}

/// Full-frame SSIM between two images of identical size.
///
/// # Safety
/// `a` and `b` must be live handles; `out` a writable f64.
#[no_mangle]
pub unsafe extern "C" fn lb_ssim(
    a: *const LbImage,
    b: *const LbImage,
    out: *mut f64,
) -> LbStatus {
    let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
        set_error("lb_ssim: null argument");
        return LbStatus::LbNullArgument;
    };
    if out.is_null() {
        set_error("lb_ssim: null out pointer");
        return LbStatus::LbNullArgument;
    }
    match ssim(&a.0, &b.0) {
        Ok(v) => {
            *out = v;
            LbStatus::LbOk
        }
        Err(e) => fail(e),
    }
}

/// Mask-SSIM restricted to the region spanned by the ground-truth landmarks
/// expanded by `margin_frac` of their bounding-box diagonal.
///
/// # Safety
/// `a`/`b` must be live handles; `gt_xy` holds `2k` f64; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lb_mask_ssim(
    a: *const LbImage,
    b: *const LbImage,
    gt_xy: *const f64,
    k: usize,
    margin_frac: f64,
    out: *mut f64,
) -> LbStatus {
    let (Some(a), Some(b)) = (a.as_ref(), b.as_ref()) else {
        set_error("lb_mask_ssim: null argument");
        return LbStatus::LbNullArgument;
    };
    let schema = Schema::standard13();
    if gt_xy.is_null() || out.is_null() || k != schema.len() {
        set_error(&format!(
            "lb_mask_ssim: need k = {} and non-null pointers",
            schema.len()
        ));
        return LbStatus::LbInvalidArgument;
    }
    let run = || -> Result<f64> {
        let coords = (0..k)
            .map(|i| [*gt_xy.add(2 * i), *gt_xy.add(2 * i + 1)])
            .collect();
        let gt = lmbreak::landmarks::LandmarkSet::new(schema.clone(), coords)?;
        let roi = landmark_roi(&gt, margin_frac, (a.0.height(), a.0.width()))?;
        mask_ssim(&a.0, &b.0, &roi)
    };
    match run() {
        Ok(v) => {
            *out = v;
            LbStatus::LbOk
        }
        Err(e) => fail(e),
    }
}

/// Baseline-JPEG round trip at `quality` (1-100). Returns NULL on failure.
///
/// # Safety
/// `img` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lb_jpeg_roundtrip(img: *const LbImage, quality: u8) -> *mut LbImage {
    let Some(img) = img.as_ref() else {
        set_error("lb_jpeg_roundtrip: null image");
        return std::ptr::null_mut();
    };
    match lmbreak::degrade::jpeg_roundtrip(&img.0, quality) {
        Ok(t) => Box::into_raw(Box::new(LbImage(t))),
        Err(e) => {
            fail(e);
            std::ptr::null_mut()
        }
    }
}
