use std::ffi::{c_char, CStr, CString};
use std::ptr;

use gkf_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { gkf_last_error(buf.as_mut_ptr(), buf.len()) };
    if n == 0 {
        return String::new();
    }
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn episode(preset: &str, steps: usize) -> *mut GkfEpisode {
    let preset = CString::new(preset).unwrap();
    let mut ep = ptr::null_mut();
    let st = unsafe { gkf_episode_generate(preset.as_ptr(), 1, 0, steps, &mut ep) };
    assert_eq!(st, GkfStatus::Ok, "{}", last_error());
    assert!(!ep.is_null());
    ep
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(gkf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generate_and_query_shape() {
    let ep = episode("lingss", 300);
    let (mut t, mut n) = (0usize, 0usize);
    assert_eq!(unsafe { gkf_episode_shape(ep, &mut t, &mut n) }, GkfStatus::Ok);
    assert_eq!((t, n), (300, 12));
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    assert_eq!(
        unsafe { gkf_episode_step(ep, 5, x.as_mut_ptr(), y.as_mut_ptr(), n) },
        GkfStatus::Ok
    );
    assert!(x.iter().all(|v| *v == 0.0 || *v == 1.0));
    assert_eq!(
        unsafe { gkf_episode_step(ep, 300, x.as_mut_ptr(), ptr::null_mut(), n) },
        GkfStatus::InvalidArgument
    );
    assert!(last_error().contains("out of range"));
    unsafe { gkf_episode_free(ep) };
}

#[test]
fn errors_set_status_and_message() {
    let mut ep = ptr::null_mut();
    let bad = CString::new("nope").unwrap();
    let st = unsafe { gkf_episode_generate(bad.as_ptr(), 1, 0, 0, &mut ep) };
    assert_eq!(st, GkfStatus::InvalidArgument);
    assert!(ep.is_null());
    assert!(last_error().contains("unknown preset"));

    let st = unsafe { gkf_episode_generate(ptr::null(), 1, 0, 0, &mut ep) };
    assert_eq!(st, GkfStatus::NullPointer);

    let missing = CString::new("/nonexistent/gkf/episode").unwrap();
    let st = unsafe { gkf_episode_load(missing.as_ptr(), &mut ep) };
    assert_eq!(st, GkfStatus::Data);

    // A successful call clears the message.
    let ep = episode("lingss", 50);
    assert_eq!(last_error(), "");
    unsafe { gkf_episode_free(ep) };
}

#[test]
fn truncated_error_message_is_terminated() {
    let mut ep = ptr::null_mut();
    let bad = CString::new("nope").unwrap();
    unsafe { gkf_episode_generate(bad.as_ptr(), 1, 0, 0, &mut ep) };
    let mut buf = [1 as c_char; 8];
    let full = unsafe { gkf_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(full > buf.len());
    assert_eq!(buf[7], 0);
}

#[test]
fn free_accepts_null() {
    unsafe {
        gkf_episode_free(ptr::null_mut());
        gkf_model_free(ptr::null_mut());
        gkf_filter_free(ptr::null_mut());
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ep = episode("nonlingss", 120);
    let ep_dir = CString::new(dir.path().join("ep").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gkf_episode_save(ep, ep_dir.as_ptr()) }, GkfStatus::Ok);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { gkf_episode_load(ep_dir.as_ptr(), &mut back) }, GkfStatus::Ok);

    let mut model = ptr::null_mut();
    assert_eq!(unsafe { gkf_model_true_replica(back, &mut model) }, GkfStatus::Ok);
    let ck = CString::new(dir.path().join("m.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { gkf_model_save(model, ck.as_ptr()) }, GkfStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { gkf_model_load(ck.as_ptr(), &mut loaded) }, GkfStatus::Ok);
    let mut a = [0.0; 4];
    let mut b = [0.0; 4];
    assert_eq!(unsafe { gkf_model_params(model, a.as_mut_ptr(), 4) }, GkfStatus::Ok);
    assert_eq!(unsafe { gkf_model_params(loaded, b.as_mut_ptr(), 4) }, GkfStatus::Ok);
    assert_eq!(a, b);
    assert_eq!(a, [0.6, -0.3, -2.0, 5.0]);
    unsafe {
        gkf_model_free(model);
        gkf_model_free(loaded);
        gkf_episode_free(ep);
        gkf_episode_free(back);
    }
}

#[test]
fn evaluate_true_replica_refinement_helps() {
    let ep = episode("lingss", 1000);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { gkf_model_true_replica(ep, &mut model) }, GkfStatus::Ok);
    let mut rep = GkfReport {
        mse_without_kfr: 0.0,
        mse_with_kfr: 0.0,
        rpi_mean: 0.0,
        rpi_std: 0.0,
        n_batches: 0,
    };
    assert_eq!(unsafe { gkf_evaluate(model, ep, GkfKfr::Both, &mut rep) }, GkfStatus::Ok);
    assert!(rep.mse_with_kfr < rep.mse_without_kfr);
    assert!(rep.rpi_mean < 0.0);
    assert_eq!(rep.n_batches, 200 / 32);

    assert_eq!(unsafe { gkf_evaluate(model, ep, GkfKfr::Off, &mut rep) }, GkfStatus::Ok);
    assert!(rep.mse_with_kfr.is_nan());
    assert!(rep.rpi_mean.is_nan());
    unsafe {
        gkf_model_free(model);
        gkf_episode_free(ep);
    }
}

#[test]
fn filter_steps_match_evaluation_semantics() {
    let ep = episode("lingss", 200);
    let mut model = ptr::null_mut();
    unsafe { gkf_model_true_replica(ep, &mut model) };
    let (mut n_params, mut state_len) = (0, 0);
    assert_eq!(unsafe { gkf_model_shape(model, &mut n_params, &mut state_len) }, GkfStatus::Ok);
    assert_eq!((n_params, state_len), (4, 12));

    let mut filter = ptr::null_mut();
    assert_eq!(unsafe { gkf_filter_new(model, 0.25, 0.12, &mut filter) }, GkfStatus::Ok);
    let n = 12;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut y_prior = vec![0.0; n];
    let (mut open, mut refined) = (0.0, 0.0);
    for t in 1..200 {
        unsafe {
            gkf_episode_step(ep, t - 1, x.as_mut_ptr(), ptr::null_mut(), n);
            gkf_episode_step(ep, t, ptr::null_mut(), y.as_mut_ptr(), n);
        }
        let st = unsafe { gkf_filter_step(filter, x.as_ptr(), n, y.as_ptr(), n, true, y_prior.as_mut_ptr()) };
        assert_eq!(st, GkfStatus::Ok, "{}", last_error());
        refined += y.iter().zip(&y_prior).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let mut mean = vec![0.0; n];
    let mut cov = vec![0.0; n * n];
    assert_eq!(
        unsafe { gkf_filter_state(filter, mean.as_mut_ptr(), n, cov.as_mut_ptr()) },
        GkfStatus::Ok
    );
    for i in 0..n {
        assert!(cov[i * n + i] > 0.0);
        for j in 0..n {
            assert!((cov[i * n + j] - cov[j * n + i]).abs() < 1e-12);
        }
    }

    assert_eq!(unsafe { gkf_filter_reset(filter) }, GkfStatus::Ok);
    unsafe { gkf_filter_state(filter, mean.as_mut_ptr(), n, ptr::null_mut()) };
    assert!(mean.iter().all(|v| *v == 0.0));
    for t in 1..200 {
        unsafe {
            gkf_episode_step(ep, t - 1, x.as_mut_ptr(), ptr::null_mut(), n);
            gkf_episode_step(ep, t, ptr::null_mut(), y.as_mut_ptr(), n);
            gkf_filter_step(filter, x.as_ptr(), n, ptr::null(), n, false, y_prior.as_mut_ptr());
        }
        open += y.iter().zip(&y_prior).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    assert!(refined < open);

    // Wrong input length is reported, not a crash.
    let st = unsafe { gkf_filter_step(filter, x.as_ptr(), 3, y.as_ptr(), n, true, ptr::null_mut()) };
    assert_eq!(st, GkfStatus::InvalidArgument);
    unsafe {
        gkf_filter_free(filter);
        gkf_model_free(model);
        gkf_episode_free(ep);
    }
}

#[test]
fn train_with_zero_epochs_keeps_init() {
    let ep = episode("lingss", 400);
    let mut model = ptr::null_mut();
    assert_eq!(
        unsafe { gkf_model_init(GkfModelFamily::Replica, ep, 3, &mut model) },
        GkfStatus::Ok
    );
    let mut before = [0.0; 4];
    unsafe { gkf_model_params(model, before.as_mut_ptr(), 4) };
    let cfg = GkfTrainConfig {
        epochs: 0,
        ..gkf_train_config_default()
    };
    let mut test = f64::NAN;
    assert_eq!(unsafe { gkf_model_train(model, ep, cfg, &mut test) }, GkfStatus::Ok);
    assert!(test.is_finite());
    let mut after = [0.0; 4];
    unsafe { gkf_model_params(model, after.as_mut_ptr(), 4) };
    assert_eq!(before, after);

    let bad = GkfTrainConfig {
        batch_size: 0,
        ..gkf_train_config_default()
    };
    assert_eq!(
        unsafe { gkf_model_train(model, ep, bad, ptr::null_mut()) },
        GkfStatus::InvalidArgument
    );
    let mut small = [0.0; 3];
    assert_eq!(
        unsafe { gkf_model_params(model, small.as_mut_ptr(), 3) },
        GkfStatus::InvalidArgument
    );
    unsafe {
        gkf_model_free(model);
        gkf_episode_free(ep);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/gkf.h")).unwrap();
    for name in [
        "gkf_episode_generate",
        "gkf_model_load",
        "gkf_filter_step",
        "gkf_last_error",
        "GKF_STATUS_NUMERICAL",
        "typedef struct GkfFilter GkfFilter",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles and runs `examples/smoke.c` against the shared library when a C
/// compiler is on the path.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| std::process::Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<this test> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    if !lib_dir.join("libgkf_ffi.so").exists() {
        eprintln!("shared library not found in {}, skipping", lib_dir.display());
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let status = std::process::Command::new(cc)
        .arg(manifest.join("examples/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-lgkf_ffi")
        .arg("-o")
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = std::process::Command::new(&bin).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "smoke failed: {stdout} {}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("without"));
}
