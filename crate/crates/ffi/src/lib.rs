//! C ABI over the occlusion rendering and estimation library.
//!
//! Conventions:
//! - Handles (`OcImage`, `OcPlane`, `OcDepthMap`, `OcCritic`) are opaque;
//!   create them through `oc_*` constructors and release them with the
//!   matching `oc_*_free`. Passing null where a handle is required fails
//!   with `OC_STATUS_NULL_POINTER`.
//! - Functions returning a pointer return null on failure; functions
//!   returning `OcStatus` return `OC_STATUS_OK` on success. In both cases
//!   `oc_last_error()` describes the most recent failure on the calling
//!   thread (pointer valid until the next failing call on that thread).
//! - Images are RGB with samples in [0, 1]; buffers are interleaved
//!   row-major, `width * height * 3` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use occlusim::critic::{critic_fit, Critic};
use occlusim::error::Error;
use occlusim::estimate::{estimate_differentiable, DiffEstimateConfig, Sources, TraceRow};
use occlusim::guidance::{compute_guidance, injection_mask};
use occlusim::models::{
    compose, render_composite, render_dirt, render_fog, render_raindrops, CompositeParams,
    DirtParams, DisplacementField, DropType, FogParams, ModelParams, RaindropParams,
};
use occlusim::raster::{load_depth, load_image, save_image, DepthMap, Image, Plane};
use occlusim::rng::RngStream;

/// Status codes returned by fallible functions.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum OcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numeric = 3,
    Io = 4,
    Internal = 5,
}

/// RGB raster handle.
pub struct OcImage(Image);
/// Single-channel raster handle (opacity, guidance, depth data).
pub struct OcPlane(Plane);
/// Depth map handle (positive values, +inf sky).
pub struct OcDepthMap(DepthMap);
/// Fitted realism critic handle.
pub struct OcCritic(Critic);

/// One raindrop population in the C parameter mirror.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct OcDropType {
    pub shape: f64,
    pub size: f64,
    pub frequency: f64,
}

/// Raindrop model parameters (defaults via `oc_raindrop_params_default`).
#[repr(C)]
#[derive(Clone, Copy)]
pub struct OcRaindropParams {
    pub sigma: f64,
    pub thickness_min: f64,
    pub thickness_max: f64,
    pub types: [OcDropType; 4],
}

/// Dirt model parameters.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct OcDirtParams {
    pub sigma: f64,
    pub alpha: f64,
    pub blob_frequency: f64,
    pub blob_size: f64,
}

/// Fog model parameters.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct OcFogParams {
    pub beta: f64,
    pub airlight: [f64; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> OcStatus {
    match err {
        Error::Config(_) | Error::InvalidParam(_) | Error::DimensionMismatch { .. } => {
            OcStatus::InvalidArgument
        }
        Error::NonFiniteLoss { .. } => OcStatus::Numeric,
        Error::Io { .. } | Error::UnsupportedImage { .. } | Error::DepthFormat { .. } => {
            OcStatus::Io
        }
    }
}

/// Run a fallible body behind a panic guard, reporting through last-error.
fn guarded<T, F: FnOnce() -> Result<T, Error>>(f: F) -> Result<T, OcStatus> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => {
            let status = status_of(&e);
            set_error(e.to_string());
            Err(status)
        }
        Err(_) => {
            set_error("internal panic".into());
            Err(OcStatus::Internal)
        }
    }
}

fn guarded_ptr<T, F: FnOnce() -> Result<T, Error>>(f: F) -> *mut T {
    match guarded(f) {
        Ok(v) => Box::into_raw(Box::new(v)),
        Err(_) => std::ptr::null_mut(),
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, Error> {
    if ptr.is_null() {
        return Err(Error::InvalidParam("null path".into()));
    }
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Error::InvalidParam("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

macro_rules! require {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error(format!("null pointer argument `{}`", stringify!($ptr)));
            return OcStatus::NullPointer;
        }
    };
}

macro_rules! require_ptr {
    ($ptr:expr) => {
        if $ptr.is_null() {
            set_error(format!("null pointer argument `{}`", stringify!($ptr)));
            return std::ptr::null_mut();
        }
    };
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn oc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|c| c.as_ptr())
            .unwrap_or(std::ptr::null())
    })
}

// ---------------------------------------------------------------------------
// Images

/// Load an 8-bit RGB PNG.
#[no_mangle]
pub unsafe extern "C" fn oc_image_load(path: *const c_char) -> *mut OcImage {
    guarded_ptr(|| Ok(OcImage(load_image(&unsafe { path_arg(path) }?)?)))
}

/// Save as 8-bit RGB PNG.
#[no_mangle]
pub unsafe extern "C" fn oc_image_save(img: *const OcImage, path: *const c_char) -> OcStatus {
    require!(img);
    match guarded(|| save_image(&unsafe { &*img }.0, &unsafe { path_arg(path) }?)) {
        Ok(()) => OcStatus::Ok,
        Err(s) => s,
    }
}

/// New black image.
#[no_mangle]
pub extern "C" fn oc_image_new(width: usize, height: usize) -> *mut OcImage {
    guarded_ptr(|| {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam("image dimensions must be > 0".into()));
        }
        Ok(OcImage(Image::new(width, height)))
    })
}

#[no_mangle]
pub unsafe extern "C" fn oc_image_width(img: *const OcImage) -> usize {
    if img.is_null() {
        return 0;
    }
    unsafe { &*img }.0.width()
}

#[no_mangle]
pub unsafe extern "C" fn oc_image_height(img: *const OcImage) -> usize {
    if img.is_null() {
        return 0;
    }
    unsafe { &*img }.0.height()
}

/// Copy pixel data out; `buffer` must hold `width * height * 3` doubles.
#[no_mangle]
pub unsafe extern "C" fn oc_image_read(img: *const OcImage, buffer: *mut f64) -> OcStatus {
    require!(img);
    require!(buffer);
    let data = unsafe { &*img }.0.data();
    unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len()) };
    OcStatus::Ok
}

/// Fill the image from a buffer of `width * height * 3` doubles in [0, 1].
#[no_mangle]
pub unsafe extern "C" fn oc_image_write(img: *mut OcImage, buffer: *const f64) -> OcStatus {
    require!(img);
    require!(buffer);
    let data = unsafe { &mut *img }.0.data_mut();
    unsafe { std::ptr::copy_nonoverlapping(buffer, data.as_mut_ptr(), data.len()) };
    let img = unsafe { &mut *img };
    if img.0.data().iter().any(|v| !v.is_finite()) {
        set_error("image samples must be finite".into());
        return OcStatus::InvalidArgument;
    }
    img.0.clamp_unit();
    OcStatus::Ok
}

#[no_mangle]
pub unsafe extern "C" fn oc_image_free(img: *mut OcImage) {
    if !img.is_null() {
        drop(unsafe { Box::from_raw(img) });
    }
}

// ---------------------------------------------------------------------------
// Planes and depth maps

#[no_mangle]
pub unsafe extern "C" fn oc_plane_width(plane: *const OcPlane) -> usize {
    if plane.is_null() {
        return 0;
    }
    unsafe { &*plane }.0.width()
}

#[no_mangle]
pub unsafe extern "C" fn oc_plane_height(plane: *const OcPlane) -> usize {
    if plane.is_null() {
        return 0;
    }
    unsafe { &*plane }.0.height()
}

/// Copy plane values out; `buffer` must hold `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn oc_plane_read(plane: *const OcPlane, buffer: *mut f64) -> OcStatus {
    require!(plane);
    require!(buffer);
    let data = unsafe { &*plane }.0.data();
    unsafe { std::ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len()) };
    OcStatus::Ok
}

/// Save as 16-bit PGM, clamping values into [0, 1].
#[no_mangle]
pub unsafe extern "C" fn oc_plane_save_pgm(
    plane: *const OcPlane,
    path: *const c_char,
) -> OcStatus {
    require!(plane);
    match guarded(|| unsafe { &*plane }.0.save_pgm16_unit(&unsafe { path_arg(path) }?)) {
        Ok(()) => OcStatus::Ok,
        Err(s) => s,
    }
}

#[no_mangle]
pub unsafe extern "C" fn oc_plane_free(plane: *mut OcPlane) {
    if !plane.is_null() {
        drop(unsafe { Box::from_raw(plane) });
    }
}

/// Load a 16-bit PGM depth map; raw value 65535 becomes the sky sentinel.
#[no_mangle]
pub unsafe extern "C" fn oc_depth_load(
    path: *const c_char,
    meters_per_unit: f64,
) -> *mut OcDepthMap {
    guarded_ptr(|| Ok(OcDepthMap(load_depth(&unsafe { path_arg(path) }?, meters_per_unit)?)))
}

#[no_mangle]
pub unsafe extern "C" fn oc_depth_free(depth: *mut OcDepthMap) {
    if !depth.is_null() {
        drop(unsafe { Box::from_raw(depth) });
    }
}

// ---------------------------------------------------------------------------
// Model parameters and rendering

/// Benchmark-default raindrop parameters.
#[no_mangle]
pub extern "C" fn oc_raindrop_params_default() -> OcRaindropParams {
    let p = RaindropParams::bench_default(0);
    OcRaindropParams {
        sigma: p.sigma,
        thickness_min: p.thickness_range.0,
        thickness_max: p.thickness_range.1,
        types: p.drop_types.map(|t| OcDropType {
            shape: t.shape,
            size: t.size,
            frequency: t.frequency,
        }),
    }
}

/// Benchmark-default dirt parameters.
#[no_mangle]
pub extern "C" fn oc_dirt_params_default() -> OcDirtParams {
    let p = DirtParams::bench_default(0);
    OcDirtParams {
        sigma: p.sigma,
        alpha: p.alpha,
        blob_frequency: p.blob_frequency,
        blob_size: p.blob_size,
    }
}

/// Default fog parameters at the given extinction coefficient.
#[no_mangle]
pub extern "C" fn oc_fog_params_default(beta: f64) -> OcFogParams {
    let p = FogParams::new(beta);
    OcFogParams {
        beta: p.beta,
        airlight: p.atmospheric_light,
    }
}

fn raindrop_params(p: &OcRaindropParams, seed: u64) -> RaindropParams {
    let mut out = RaindropParams::bench_default(seed);
    out.sigma = p.sigma;
    out.thickness_range = (p.thickness_min, p.thickness_max);
    for (dst, src) in out.drop_types.iter_mut().zip(&p.types) {
        *dst = DropType {
            shape: src.shape,
            size: src.size,
            frequency: src.frequency,
        };
    }
    out.seed = seed;
    out
}

fn dirt_params(p: &OcDirtParams, seed: u64) -> DirtParams {
    DirtParams {
        sigma: p.sigma,
        alpha: p.alpha,
        blob_frequency: p.blob_frequency,
        blob_size: p.blob_size,
        seed,
    }
}

fn fog_params(p: &OcFogParams) -> FogParams {
    FogParams {
        beta: p.beta,
        atmospheric_light: p.airlight,
    }
}

unsafe fn render_common(
    scene: *const OcImage,
    out_alpha: *mut *mut OcPlane,
    render: impl FnOnce(&Image) -> Result<occlusim::models::Overlay, Error>,
) -> *mut OcImage {
    let result = guarded(|| {
        let scene = &unsafe { &*scene }.0;
        let overlay = render(scene)?;
        let composed = compose(scene, &overlay)?;
        Ok((composed, overlay.alpha))
    });
    match result {
        Ok((composed, alpha)) => {
            if !out_alpha.is_null() {
                unsafe { *out_alpha = Box::into_raw(Box::new(OcPlane(alpha))) };
            }
            Box::into_raw(Box::new(OcImage(composed)))
        }
        Err(_) => std::ptr::null_mut(),
    }
}

/// Render raindrops over a scene and return the composite. If `out_alpha`
/// is non-null it receives the overlay opacity plane.
#[no_mangle]
pub unsafe extern "C" fn oc_render_raindrops(
    scene: *const OcImage,
    params: *const OcRaindropParams,
    seed: u64,
    out_alpha: *mut *mut OcPlane,
) -> *mut OcImage {
    require_ptr!(scene);
    require_ptr!(params);
    let p = raindrop_params(unsafe { &*params }, seed);
    unsafe {
        render_common(scene, out_alpha, |img| {
            render_raindrops(img, &p, &mut RngStream::new(seed), None)
        })
    }
}

/// Render dirt over a scene and return the composite.
#[no_mangle]
pub unsafe extern "C" fn oc_render_dirt(
    scene: *const OcImage,
    params: *const OcDirtParams,
    seed: u64,
    out_alpha: *mut *mut OcPlane,
) -> *mut OcImage {
    require_ptr!(scene);
    require_ptr!(params);
    let p = dirt_params(unsafe { &*params }, seed);
    unsafe {
        render_common(scene, out_alpha, |img| {
            render_dirt(img, &p, &mut RngStream::new(seed), None)
        })
    }
}

/// Render fog over a scene with its depth map and return the composite.
#[no_mangle]
pub unsafe extern "C" fn oc_render_fog(
    scene: *const OcImage,
    depth: *const OcDepthMap,
    params: *const OcFogParams,
    out_alpha: *mut *mut OcPlane,
) -> *mut OcImage {
    require_ptr!(scene);
    require_ptr!(depth);
    require_ptr!(params);
    let p = fog_params(unsafe { &*params });
    let depth = &unsafe { &*depth }.0;
    unsafe { render_common(scene, out_alpha, |img| render_fog(img, depth, &p)) }
}

/// Render a translated alpha composite (e.g. watermark) over a scene.
#[no_mangle]
pub unsafe extern "C" fn oc_render_composite(
    scene: *const OcImage,
    overlay: *const OcImage,
    overlay_alpha: *const OcPlane,
    seed: u64,
    out_alpha: *mut *mut OcPlane,
) -> *mut OcImage {
    require_ptr!(scene);
    require_ptr!(overlay);
    require_ptr!(overlay_alpha);
    let overlay = unsafe { &*overlay }.0.clone();
    let alpha = unsafe { &*overlay_alpha }.0.clone();
    unsafe {
        render_common(scene, out_alpha, move |img| {
            let params = CompositeParams::new(overlay, alpha, seed)?;
            render_composite(img, &params, &mut RngStream::new(seed))
        })
    }
}

// ---------------------------------------------------------------------------
// Critic and guidance

/// Fit a critic over the target images.
#[no_mangle]
pub unsafe extern "C" fn oc_critic_fit(
    targets: *const *const OcImage,
    count: usize,
    patch_size: usize,
) -> *mut OcCritic {
    require_ptr!(targets);
    guarded_ptr(|| {
        let handles = unsafe { std::slice::from_raw_parts(targets, count) };
        if handles.iter().any(|h| h.is_null()) {
            return Err(Error::InvalidParam("null image in target list".into()));
        }
        let images: Vec<Image> = handles.iter().map(|&h| unsafe { &*h }.0.clone()).collect();
        Ok(OcCritic(critic_fit(&images, patch_size)?))
    })
}

/// Realism score of an image: 0 means its patch statistics match the
/// fitted targets.
#[no_mangle]
pub unsafe extern "C" fn oc_critic_score(
    critic: *const OcCritic,
    img: *const OcImage,
    out_value: *mut f64,
) -> OcStatus {
    require!(critic);
    require!(img);
    require!(out_value);
    match guarded(|| unsafe { &*critic }.0.score(&unsafe { &*img }.0)) {
        Ok(score) => {
            unsafe { *out_value = score.value };
            OcStatus::Ok
        }
        Err(s) => s,
    }
}

/// Analytic input gradient; `buffer` must hold `width * height * 3` doubles.
#[no_mangle]
pub unsafe extern "C" fn oc_critic_input_gradient(
    critic: *const OcCritic,
    img: *const OcImage,
    buffer: *mut f64,
) -> OcStatus {
    require!(critic);
    require!(img);
    require!(buffer);
    match guarded(|| unsafe { &*critic }.0.input_gradient(&unsafe { &*img }.0)) {
        Ok(grad) => {
            unsafe { std::ptr::copy_nonoverlapping(grad.as_ptr(), buffer, grad.len()) };
            OcStatus::Ok
        }
        Err(s) => s,
    }
}

/// Serialize the critic to a `.critic` file.
#[no_mangle]
pub unsafe extern "C" fn oc_critic_save(
    critic: *const OcCritic,
    path: *const c_char,
) -> OcStatus {
    require!(critic);
    match guarded(|| unsafe { &*critic }.0.save(&unsafe { path_arg(path) }?)) {
        Ok(()) => OcStatus::Ok,
        Err(s) => s,
    }
}

/// Load a critic from a `.critic` file.
#[no_mangle]
pub unsafe extern "C" fn oc_critic_load(path: *const c_char) -> *mut OcCritic {
    guarded_ptr(|| Ok(OcCritic(Critic::load(&unsafe { path_arg(path) }?)?)))
}

#[no_mangle]
pub unsafe extern "C" fn oc_critic_free(critic: *mut OcCritic) {
    if !critic.is_null() {
        drop(unsafe { Box::from_raw(critic) });
    }
}

/// Dataset-averaged guidance map in [0, 1] over the source images.
#[no_mangle]
pub unsafe extern "C" fn oc_guidance_map(
    critic: *const OcCritic,
    sources: *const *const OcImage,
    count: usize,
) -> *mut OcPlane {
    require_ptr!(critic);
    require_ptr!(sources);
    guarded_ptr(|| {
        let handles = unsafe { std::slice::from_raw_parts(sources, count) };
        if handles.iter().any(|h| h.is_null()) {
            return Err(Error::InvalidParam("null image in source list".into()));
        }
        let images: Vec<Image> = handles.iter().map(|&h| unsafe { &*h }.0.clone()).collect();
        let dg = compute_guidance(&unsafe { &*critic }.0, &images)?;
        Ok(OcPlane(dg.plane().clone()))
    })
}

/// Threshold a guidance map: `mask_out[i] = 1` where `dg[i] < gamma`.
/// `mask_out` must hold `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn oc_guidance_threshold(
    dg: *const OcPlane,
    gamma: f64,
    mask_out: *mut u8,
) -> OcStatus {
    require!(dg);
    require!(mask_out);
    let plane = &unsafe { &*dg }.0;
    if !(0.0..=1.0).contains(&gamma) {
        set_error(format!("gamma must lie in [0, 1], got {gamma}"));
        return OcStatus::InvalidArgument;
    }
    // Reuse the library threshold semantics through a guidance map round trip.
    let result = guarded(|| {
        let map = occlusim::guidance::GuidanceMap::from_plane(plane.clone())?;
        injection_mask(&map, gamma)
    });
    match result {
        Ok(mask) => {
            for y in 0..mask.height() {
                for x in 0..mask.width() {
                    unsafe {
                        *mask_out.add(y * mask.width() + x) = mask.get(x, y) as u8;
                    }
                }
            }
            OcStatus::Ok
        }
        Err(s) => s,
    }
}

// ---------------------------------------------------------------------------
// Differentiable estimation

unsafe fn collect_images(
    ptrs: *const *const OcImage,
    count: usize,
) -> Result<Vec<Image>, Error> {
    if count == 0 {
        return Err(Error::InvalidParam("empty image list".into()));
    }
    let handles = unsafe { std::slice::from_raw_parts(ptrs, count) };
    if handles.iter().any(|h| h.is_null()) {
        return Err(Error::InvalidParam("null image in list".into()));
    }
    Ok(handles.iter().map(|&h| unsafe { &*h }.0.clone()).collect())
}

fn fit_diff_block(
    params: ModelParams,
    sources: Vec<Image>,
    depths: Option<Vec<DepthMap>>,
    targets: Vec<Image>,
    seed: u64,
) -> Result<ModelParams, Error> {
    let critic = critic_fit(&targets, 8)?;
    let cfg = DiffEstimateConfig::for_model(&params);
    let mut srcs = Sources::new(&sources);
    if let Some(d) = depths.as_deref() {
        srcs = srcs.with_depths(d);
    }
    let mut trace: Vec<TraceRow> = Vec::new();
    let est = estimate_differentiable(
        &params,
        &srcs,
        &critic,
        &cfg,
        &mut RngStream::new(seed),
        0,
        &mut trace,
    )?;
    Ok(params.with_diff(&est.values))
}

/// Regress the raindrop defocus sigma against a target set; `params.sigma`
/// is both the starting point and the result.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_raindrop_sigma(
    sources: *const *const OcImage,
    source_count: usize,
    targets: *const *const OcImage,
    target_count: usize,
    params: *mut OcRaindropParams,
    seed: u64,
) -> OcStatus {
    require!(sources);
    require!(targets);
    require!(params);
    let model = ModelParams::Raindrop(raindrop_params(unsafe { &*params }, seed));
    let result = guarded(|| {
        let src = unsafe { collect_images(sources, source_count) }?;
        let tgt = unsafe { collect_images(targets, target_count) }?;
        fit_diff_block(model, src, None, tgt, seed)
    });
    match result {
        Ok(fitted) => {
            unsafe { (*params).sigma = fitted.diff_values()[0] };
            OcStatus::Ok
        }
        Err(s) => s,
    }
}

/// Regress dirt sigma and alpha against a target set; `params` carries the
/// starting point in and the estimate out.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_dirt(
    sources: *const *const OcImage,
    source_count: usize,
    targets: *const *const OcImage,
    target_count: usize,
    params: *mut OcDirtParams,
    seed: u64,
) -> OcStatus {
    require!(sources);
    require!(targets);
    require!(params);
    let model = ModelParams::Dirt(dirt_params(unsafe { &*params }, seed));
    let result = guarded(|| {
        let src = unsafe { collect_images(sources, source_count) }?;
        let tgt = unsafe { collect_images(targets, target_count) }?;
        fit_diff_block(model, src, None, tgt, seed)
    });
    match result {
        Ok(fitted) => {
            let v = fitted.diff_values();
            unsafe {
                (*params).sigma = v[0];
                (*params).alpha = v[1];
            }
            OcStatus::Ok
        }
        Err(s) => s,
    }
}

/// Regress the fog extinction coefficient; `depths` must parallel `sources`.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_fog_beta(
    sources: *const *const OcImage,
    source_count: usize,
    depths: *const *const OcDepthMap,
    targets: *const *const OcImage,
    target_count: usize,
    params: *mut OcFogParams,
    seed: u64,
) -> OcStatus {
    require!(sources);
    require!(depths);
    require!(targets);
    require!(params);
    let model = ModelParams::Fog(fog_params(unsafe { &*params }));
    let result = guarded(|| {
        let src = unsafe { collect_images(sources, source_count) }?;
        let handles = unsafe { std::slice::from_raw_parts(depths, source_count) };
        if handles.iter().any(|h| h.is_null()) {
            return Err(Error::InvalidParam("null depth map in list".into()));
        }
        let d: Vec<DepthMap> = handles.iter().map(|&h| unsafe { &*h }.0.clone()).collect();
        let tgt = unsafe { collect_images(targets, target_count) }?;
        fit_diff_block(model, src, Some(d), tgt, seed)
    });
    match result {
        Ok(fitted) => {
            unsafe { (*params).beta = fitted.diff_values()[0] };
            OcStatus::Ok
        }
        Err(s) => s,
    }
}

/// Load displacement rasters and render raindrops with them instead of the
/// built-in field.
#[no_mangle]
pub unsafe extern "C" fn oc_render_raindrops_with_field(
    scene: *const OcImage,
    params: *const OcRaindropParams,
    udisp_path: *const c_char,
    vdisp_path: *const c_char,
    seed: u64,
    out_alpha: *mut *mut OcPlane,
) -> *mut OcImage {
    require_ptr!(scene);
    require_ptr!(params);
    let base = raindrop_params(unsafe { &*params }, seed);
    let u = unsafe { path_arg(udisp_path) };
    let v = unsafe { path_arg(vdisp_path) };
    unsafe {
        render_common(scene, out_alpha, move |img| {
            let mut p = base;
            p.displacement = Arc::new(DisplacementField::load(&u?, &v?)?);
            render_raindrops(img, &p, &mut RngStream::new(seed), None)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c_path(dir: &tempfile::TempDir, name: &str) -> CString {
        CString::new(dir.path().join(name).to_str().unwrap()).unwrap()
    }

    fn sample_image(seed: u64) -> *mut OcImage {
        let img = oc_image_new(32, 32);
        let mut rng = RngStream::new(seed);
        let data: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.next_f64()).collect();
        let status = unsafe { oc_image_write(img, data.as_ptr()) };
        assert_eq!(status, OcStatus::Ok);
        img
    }

    #[test]
    fn version_is_non_null() {
        let v = oc_version();
        assert!(!v.is_null());
        let s = unsafe { CStr::from_ptr(v) }.to_str().unwrap();
        assert!(!s.is_empty());
    }

    #[test]
    fn image_round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let img = sample_image(1);
        let path = c_path(&dir, "img.png");
        assert_eq!(unsafe { oc_image_save(img, path.as_ptr()) }, OcStatus::Ok);
        let back = unsafe { oc_image_load(path.as_ptr()) };
        assert!(!back.is_null());
        assert_eq!(unsafe { oc_image_width(back) }, 32);
        let mut buf = vec![0.0; 32 * 32 * 3];
        assert_eq!(unsafe { oc_image_read(back, buf.as_mut_ptr()) }, OcStatus::Ok);
        assert!(buf.iter().all(|v| (0.0..=1.0).contains(v)));
        unsafe {
            oc_image_free(img);
            oc_image_free(back);
        }
    }

    #[test]
    fn load_failure_sets_error() {
        let path = CString::new("/definitely/not/here.png").unwrap();
        let img = unsafe { oc_image_load(path.as_ptr()) };
        assert!(img.is_null());
        let err = oc_last_error();
        assert!(!err.is_null());
        let msg = unsafe { CStr::from_ptr(err) }.to_str().unwrap();
        assert!(msg.contains("not/here.png"), "{msg}");
    }

    #[test]
    fn null_arguments_rejected() {
        let status = unsafe { oc_image_save(std::ptr::null(), std::ptr::null()) };
        assert_eq!(status, OcStatus::NullPointer);
        let img = unsafe {
            oc_render_raindrops(std::ptr::null(), std::ptr::null(), 0, std::ptr::null_mut())
        };
        assert!(img.is_null());
    }

    #[test]
    fn raindrop_render_composites() {
        let scene = sample_image(2);
        let params = oc_raindrop_params_default();
        let mut alpha: *mut OcPlane = std::ptr::null_mut();
        let out = unsafe { oc_render_raindrops(scene, &params, 7, &mut alpha) };
        assert!(!out.is_null());
        assert!(!alpha.is_null());
        assert_eq!(unsafe { oc_plane_width(alpha) }, 32);
        let mut buf = vec![0.0; 32 * 32];
        assert_eq!(unsafe { oc_plane_read(alpha, buf.as_mut_ptr()) }, OcStatus::Ok);
        assert!(buf.iter().any(|&a| a > 0.0));
        unsafe {
            oc_image_free(scene);
            oc_image_free(out);
            oc_plane_free(alpha);
        }
    }

    #[test]
    fn invalid_params_report_invalid_argument() {
        let scene = sample_image(3);
        let mut params = oc_dirt_params_default();
        params.alpha = 2.0;
        let out = unsafe { oc_render_dirt(scene, &params, 1, std::ptr::null_mut()) };
        assert!(out.is_null());
        let msg = unsafe { CStr::from_ptr(oc_last_error()) }.to_str().unwrap();
        assert!(msg.contains("alpha"), "{msg}");
        unsafe { oc_image_free(scene) };
    }

    #[test]
    fn critic_fit_score_and_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs: Vec<*mut OcImage> = (0..4).map(|i| sample_image(10 + i)).collect();
        let ptrs: Vec<*const OcImage> = imgs.iter().map(|&p| p as *const _).collect();
        let critic = unsafe { oc_critic_fit(ptrs.as_ptr(), ptrs.len(), 8) };
        assert!(!critic.is_null());

        let mut value = f64::NAN;
        assert_eq!(
            unsafe { oc_critic_score(critic, imgs[0], &mut value) },
            OcStatus::Ok
        );
        assert!(value.is_finite() && value >= 0.0);

        let mut grad = vec![0.0; 32 * 32 * 3];
        assert_eq!(
            unsafe { oc_critic_input_gradient(critic, imgs[0], grad.as_mut_ptr()) },
            OcStatus::Ok
        );
        assert!(grad.iter().any(|&g| g != 0.0));

        let path = c_path(&dir, "stats.critic");
        assert_eq!(unsafe { oc_critic_save(critic, path.as_ptr()) }, OcStatus::Ok);
        let back = unsafe { oc_critic_load(path.as_ptr()) };
        assert!(!back.is_null());
        let mut value2 = f64::NAN;
        assert_eq!(
            unsafe { oc_critic_score(back, imgs[0], &mut value2) },
            OcStatus::Ok
        );
        assert_eq!(value, value2);

        unsafe {
            oc_critic_free(critic);
            oc_critic_free(back);
            for img in imgs {
                oc_image_free(img);
            }
        }
    }

    #[test]
    fn guidance_map_and_threshold() {
        let imgs: Vec<*mut OcImage> = (0..3).map(|i| sample_image(20 + i)).collect();
        let ptrs: Vec<*const OcImage> = imgs.iter().map(|&p| p as *const _).collect();
        let critic = unsafe { oc_critic_fit(ptrs.as_ptr(), ptrs.len(), 8) };
        let dg = unsafe { oc_guidance_map(critic, ptrs.as_ptr(), ptrs.len()) };
        assert!(!dg.is_null());
        let mut mask = vec![2u8; 32 * 32];
        assert_eq!(
            unsafe { oc_guidance_threshold(dg, 0.0, mask.as_mut_ptr()) },
            OcStatus::Ok
        );
        assert!(mask.iter().all(|&m| m == 0));
        unsafe {
            oc_plane_free(dg);
            oc_critic_free(critic);
            for img in imgs {
                oc_image_free(img);
            }
        }
    }
}
