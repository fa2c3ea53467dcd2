use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use winconv::nn::model::{model_init, BlockSpec, Downsampling, FirstLayerSpec, ModelSpec, Task};
use winconv::window::{WindowFamily, WindowSpec};
use winconv::{Rng, Tensor};
use winconv_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    unsafe {
        wc_last_error(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn tensor(shape: &[usize], data: &[f64]) -> *mut WcTensor {
    let mut t = ptr::null_mut();
    let st = unsafe { wc_tensor_new(shape.as_ptr(), shape.len(), data.as_ptr(), data.len(), &mut t) };
    assert_eq!(st, WcStatus::Ok, "{}", last_error());
    t
}

fn read(t: *const WcTensor) -> (Vec<usize>, Vec<f64>) {
    unsafe {
        let mut shape = vec![0; wc_tensor_ndim(t)];
        assert_eq!(wc_tensor_shape(t, shape.as_mut_ptr(), shape.len()), WcStatus::Ok);
        let mut data = vec![0.0; wc_tensor_len(t)];
        assert_eq!(wc_tensor_data(t, data.as_mut_ptr(), data.len()), WcStatus::Ok);
        (shape, data)
    }
}

fn small_spec() -> ModelSpec {
    let win = |k| Some(WindowSpec::square(WindowFamily::Hamming, k));
    ModelSpec {
        task: Task::Classification,
        input_shape: [2, 6, 6],
        first_layer: FirstLayerSpec { k: 3, stride: 2, out_channels: 3, window: win(3) },
        blocks: vec![BlockSpec { k: 3, out_channels: 4, window: win(3) }],
        downsampling: Downsampling::StridedConv,
        num_outputs: 3,
    }
}

fn model(seed: u64) -> *mut WcModel {
    let json = CString::new(serde_json::to_string(&small_spec()).unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { wc_model_from_spec_json(json.as_ptr(), seed, &mut m) }, WcStatus::Ok, "{}", last_error());
    m
}

#[test]
fn hamming_taps_match_closed_form() {
    let k = 7;
    let mut w = vec![0.0; k];
    assert_eq!(unsafe { wc_hamming_1d(k, w.as_mut_ptr(), k) }, WcStatus::Ok);
    for (n, v) in w.iter().enumerate() {
        let want = 25.0 / 46.0 - 21.0 / 46.0 * (2.0 * std::f64::consts::PI * n as f64 / 6.0).cos();
        assert!((v - want).abs() < 1e-15);
    }
}

#[test]
fn short_buffer_and_null_are_reported() {
    let mut w = vec![0.0; 3];
    assert_eq!(unsafe { wc_hamming_1d(5, w.as_mut_ptr(), 3) }, WcStatus::BufferTooSmall);
    assert!(last_error().contains("5 elements"));
    assert_eq!(unsafe { wc_hamming_1d(0, w.as_mut_ptr(), 3) }, WcStatus::Size);
    assert_eq!(unsafe { wc_tensor_new(ptr::null(), 1, ptr::null(), 0, ptr::null_mut()) }, WcStatus::NullPointer);
    assert_eq!(unsafe { wc_dft2_mag(ptr::null(), ptr::null_mut()) }, WcStatus::NullPointer);
    assert!(last_error().contains("NULL"));
}

#[test]
fn last_error_reports_full_length_when_truncated() {
    let _ = unsafe { wc_tensor_new([2usize, 2].as_ptr(), 2, [1.0f64].as_ptr(), 1, &mut ptr::null_mut()) };
    let full = last_error();
    let mut tiny = [0 as c_char; 4];
    let n = unsafe { wc_last_error(tiny.as_mut_ptr(), tiny.len()) };
    assert_eq!(n, full.len());
    assert_eq!(unsafe { CStr::from_ptr(tiny.as_ptr()) }.to_bytes(), &full.as_bytes()[..3]);
}

#[test]
fn tensor_round_trip_and_shape_error() {
    let data: Vec<f64> = (0..6).map(f64::from).collect();
    let t = tensor(&[2, 3], &data);
    assert_eq!(read(t), (vec![2, 3], data));
    unsafe { wc_tensor_free(t) };
    let mut t = ptr::null_mut();
    let st = unsafe { wc_tensor_new([4usize].as_ptr(), 1, [1.0f64, 2.0].as_ptr(), 2, &mut t) };
    assert_eq!(st, WcStatus::Shape);
    assert!(t.is_null());
    unsafe { wc_tensor_free(ptr::null_mut()) };
}

#[test]
fn impulse_spectrum_is_flat() {
    let mut d = vec![0.0; 16];
    d[0] = 1.0;
    let x = tensor(&[4, 4], &d);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { wc_dft2_mag(x, &mut s) }, WcStatus::Ok);
    let (shape, mag) = read(s);
    assert_eq!(shape, vec![4, 4]);
    assert!(mag.iter().all(|v| (v - 1.0).abs() < 1e-12));
    unsafe {
        wc_tensor_free(x);
        wc_tensor_free(s);
    }
}

#[test]
fn windowed_kernel_leaks_less_than_box() {
    let leak = |family| unsafe {
        let mut w = ptr::null_mut();
        assert_eq!(wc_window_2d(family, 7, 7, &mut w), WcStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(wc_kernel_frequency_response(w, 64, &mut s), WcStatus::Ok);
        let mut r = WcLeakage::default();
        assert_eq!(wc_leakage_metrics(s, -6.0, &mut r), WcStatus::Ok, "{}", last_error());
        wc_tensor_free(w);
        wc_tensor_free(s);
        r
    };
    let rect = leak(WcWindowFamily::Rectangular);
    let ham = leak(WcWindowFamily::Hamming);
    // 1-D figures on a 64-point grid, computed separately. Seven Hamming
    // taps leave a single sidelobe, at Nyquist.
    assert!((rect.sidelobe_db + 12.667).abs() < 1e-3, "{}", rect.sidelobe_db);
    assert!((ham.sidelobe_db + 31.709).abs() < 1e-3, "{}", ham.sidelobe_db);
    assert!(ham.out_of_band_energy_fraction < rect.out_of_band_energy_fraction);
}

#[test]
fn model_predict_matches_library() {
    let m = model(11);
    let reference = model_init(&small_spec(), &mut Rng::new(11)).unwrap();
    let mut rng = Rng::new(5);
    let batch = rng.uniform_tensor(-1.0, 1.0, &[2, 2, 6, 6]).unwrap();
    let x = tensor(batch.shape(), batch.data());
    let mut y = ptr::null_mut();
    assert_eq!(unsafe { wc_model_predict(m, x, &mut y) }, WcStatus::Ok, "{}", last_error());
    let want = reference.predict(&batch).unwrap();
    assert_eq!(read(y), (want.shape().to_vec(), want.data().to_vec()));

    let mut shape = [0usize; 3];
    assert_eq!(unsafe { wc_model_input_shape(m, shape.as_mut_ptr()) }, WcStatus::Ok);
    assert_eq!(shape, [2, 6, 6]);
    assert_eq!(unsafe { wc_model_num_outputs(m) }, 3);
    assert_eq!(unsafe { wc_model_num_convs(m) }, 2);

    let bad = tensor(&[1, 1, 6, 6], &[0.0; 36]);
    let mut z = ptr::null_mut();
    assert_ne!(unsafe { wc_model_predict(m, bad, &mut z) }, WcStatus::Ok);
    assert!(z.is_null());
    unsafe {
        wc_tensor_free(x);
        wc_tensor_free(y);
        wc_tensor_free(bad);
        wc_model_free(m);
    }
}

#[test]
fn checkpoint_round_trip_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("ck").to_str().unwrap()).unwrap();
    let m = model(2);
    assert_eq!(unsafe { wc_model_save(m, path.as_ptr()) }, WcStatus::Ok, "{}", last_error());
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { wc_model_load(path.as_ptr(), &mut back) }, WcStatus::Ok, "{}", last_error());
    let x = tensor(&[1, 2, 6, 6], &(0..72).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>());
    let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(wc_model_predict(m, x, &mut a), WcStatus::Ok);
        assert_eq!(wc_model_predict(back, x, &mut b), WcStatus::Ok);
    }
    assert_eq!(read(a), read(b));
    let missing = CString::new(dir.path().join("nope").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { wc_model_load(missing.as_ptr(), &mut none) }, WcStatus::Io);
    unsafe {
        for t in [x, a, b] {
            wc_tensor_free(t);
        }
        wc_model_free(m);
        wc_model_free(back);
    }
}

#[test]
fn kernels_and_ortho_deviation() {
    let m = model(4);
    let reference = model_init(&small_spec(), &mut Rng::new(4)).unwrap();
    let mut k = ptr::null_mut();
    assert_eq!(unsafe { wc_model_effective_kernel(m, 1, &mut k) }, WcStatus::Ok);
    let want: Tensor = reference.convs()[1].effective_kernel();
    assert_eq!(read(k), (want.shape().to_vec(), want.data().to_vec()));

    let mut d = f64::NAN;
    assert_eq!(unsafe { wc_model_ortho_deviation(m, 0, &mut d) }, WcStatus::Ok, "{}", last_error());
    let dbt = winconv::ortho::build_dbt(&reference.convs()[0], [2, 6, 6]).unwrap();
    assert_eq!(d, winconv::ortho::ortho_deviation(&dbt).unwrap());
    assert_eq!(unsafe { wc_model_ortho_deviation(m, 2, &mut d) }, WcStatus::InvalidArgument);
    unsafe {
        wc_tensor_free(k);
        wc_model_free(m);
    }
}

#[test]
fn deepfool_through_c_api() {
    let m = model(8);
    let reference = model_init(&small_spec(), &mut Rng::new(8)).unwrap();
    let mut rng = Rng::new(1);
    let img = rng.uniform_tensor(0.0, 1.0, &[2, 6, 6]).unwrap();
    let label = winconv::nn::train::argmax(&reference.predict_one(&img).unwrap());
    let x = tensor(img.shape(), img.data());
    let mut r = WcDeepFoolResult::default();
    let mut adv = ptr::null_mut();
    let st = unsafe { wc_deepfool(m, x, label, 100, 0.02, &mut r, &mut adv) };
    assert_eq!(st, WcStatus::Ok, "{}", last_error());
    assert_eq!(r.clean_prediction, label);
    if r.success {
        assert_ne!(r.final_prediction, label);
        assert!(!adv.is_null());
        let (_, a) = read(adv);
        let norm = a.iter().zip(img.data()).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        assert!((norm - r.perturbation_norm).abs() < 1e-9 * (1.0 + norm));
    }
    assert_eq!(unsafe { wc_deepfool(m, x, 3, 100, 0.02, &mut r, ptr::null_mut()) }, WcStatus::InvalidArgument);
    unsafe {
        wc_tensor_free(x);
        wc_tensor_free(adv);
        wc_model_free(m);
    }
}

#[test]
fn version_is_cargo_version() {
    let v = unsafe { CStr::from_ptr(wc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/winconv.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["wc_tensor_new", "wc_model_predict", "wc_deepfool", "WC_STATUS_BUFFER_TOO_SMALL", "typedef struct WcModel WcModel"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(&src, "#include \"winconv.h\"\nint main(void) { WcTensor *t = 0; return wc_tensor_ndim(t) == 0 ? 0 : 1; }\n").unwrap();
    match Command::new("cc").arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(header.parent().unwrap()).arg(&src).status() {
        Ok(s) => assert!(s.success(), "header does not compile"),
        Err(e) => eprintln!("no C compiler, skipping syntax check: {e}"),
    }
}
