use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use hipbot_ffi::*;

fn last_error() -> String {
    let p = hipbot_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn scenario(json: &str) -> *mut HipbotScenario {
    let text = CString::new(json).unwrap();
    let mut s = ptr::null_mut();
    let status = unsafe { hipbot_scenario_from_json(text.as_ptr(), &mut s) };
    assert_eq!(
        status,
        HipbotStatus::Ok,
        "{}",
        if s.is_null() { last_error() } else { String::new() }
    );
    s
}

const OPEN_WORLD: &str = r#"{"version":1,"environment":{"fixed":{"start":[20,100],"goal":[150,60],"obstacles":[]}},"method":"rmpflow","seeds":[1,2]}"#;

#[test]
fn balanced_solve_fills_row_major_plan() {
    let cost = [0.0, 1.0, 1.0, 0.0, 2.0, 0.5];
    let row = [0.5, 0.5];
    let col = [0.2, 0.3, 0.5];
    let mut plan = [0.0; 6];
    let mut info = HipbotSolveInfo::default();
    let status = unsafe {
        hipbot_solve_balanced(
            cost.as_ptr(),
            2,
            3,
            row.as_ptr(),
            col.as_ptr(),
            0.1,
            10_000,
            1e-9,
            plan.as_mut_ptr(),
            &mut info,
        )
    };
    assert_eq!(status, HipbotStatus::Ok);
    assert!(info.converged && info.marginal_error < 1e-8);
    for i in 0..2 {
        assert!((plan[i * 3..i * 3 + 3].iter().sum::<f64>() - row[i]).abs() < 1e-8);
    }
    for j in 0..3 {
        assert!((plan[j] + plan[3 + j] - col[j]).abs() < 1e-8);
    }
    // cheap (0,0) beats expensive (1,0)
    assert!(plan[0] > plan[3]);
}

#[test]
fn unbalanced_solve_is_positive_and_info_is_optional() {
    let cost = [0.3, 0.9, 0.1, 0.4];
    let prior = [1.0, 1.0];
    let mut plan = [0.0; 4];
    let status = unsafe {
        hipbot_solve_unbalanced(
            cost.as_ptr(),
            2,
            2,
            prior.as_ptr(),
            prior.as_ptr(),
            0.05,
            1.0,
            1000,
            1e-9,
            plan.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HipbotStatus::Ok);
    assert!(plan.iter().all(|&p| p > 0.0));
}

#[test]
fn solver_errors_report_status_and_message() {
    let cost = [0.0; 4];
    let (row, col) = ([1.0, 1.0], [0.5, 0.5]);
    let mut plan = [0.0; 4];
    let status = unsafe {
        hipbot_solve_balanced(
            cost.as_ptr(),
            2,
            2,
            row.as_ptr(),
            col.as_ptr(),
            0.1,
            100,
            1e-9,
            plan.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HipbotStatus::InvalidArgument);
    assert!(last_error().contains("marginal masses differ"));

    let status = unsafe {
        hipbot_solve_balanced(
            cost.as_ptr(),
            2,
            2,
            row.as_ptr(),
            row.as_ptr(),
            -1.0,
            100,
            1e-9,
            plan.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HipbotStatus::Solver);

    let status = unsafe {
        hipbot_solve_balanced(
            ptr::null(),
            2,
            2,
            row.as_ptr(),
            row.as_ptr(),
            0.1,
            100,
            1e-9,
            plan.as_mut_ptr(),
            ptr::null_mut(),
        )
    };
    assert_eq!(status, HipbotStatus::NullPointer);
}

#[test]
fn bad_json_is_a_config_error() {
    let text = CString::new(r#"{"version":1,"bogus":true}"#).unwrap();
    let mut s = ptr::null_mut();
    let status = unsafe { hipbot_scenario_from_json(text.as_ptr(), &mut s) };
    assert_eq!(status, HipbotStatus::Config);
    assert!(s.is_null());
    assert!(last_error().contains("bogus"));
}

#[test]
fn invalid_utf8_is_rejected() {
    let bytes = CString::new(vec![0xffu8, 0xfe]).unwrap();
    let mut s = ptr::null_mut();
    let status = unsafe { hipbot_scenario_from_json(bytes.as_ptr(), &mut s) };
    assert_eq!(status, HipbotStatus::InvalidUtf8);
}

#[test]
fn stepping_an_episode_reaches_the_goal() {
    let s = scenario(OPEN_WORLD);
    let mut e = ptr::null_mut();
    assert_eq!(unsafe { hipbot_episode_new(s, 1, &mut e) }, HipbotStatus::Ok);
    unsafe { hipbot_scenario_free(s) };
    let mut state = HipbotAgentState::default();
    assert_eq!(unsafe { hipbot_episode_state(e, &mut state) }, HipbotStatus::Ok);
    assert_eq!((state.step, state.qx, state.qy), (0, 20.0, 100.0));
    let mut steps = 0;
    while !state.done {
        assert_eq!(unsafe { hipbot_episode_step(e, &mut state) }, HipbotStatus::Ok);
        steps += 1;
        assert_eq!(state.step, steps);
    }
    assert!(state.reached && !state.collided);
    let mut result = HipbotEpisodeResult::default();
    assert_eq!(unsafe { hipbot_episode_finish(e, &mut result) }, HipbotStatus::Ok);
    assert!(result.success && result.safe);
    assert_eq!(result.ts, steps);
}

#[test]
fn episode_and_batch_agree() {
    let s = scenario(OPEN_WORLD);
    let mut one = HipbotEpisodeResult::default();
    let mut two = HipbotEpisodeResult::default();
    let mut metrics = HipbotMetrics::default();
    unsafe {
        assert_eq!(hipbot_run_episode(s, 1, &mut one), HipbotStatus::Ok);
        assert_eq!(hipbot_run_episode(s, 2, &mut two), HipbotStatus::Ok);
        assert_eq!(hipbot_run_batch(s, &mut metrics), HipbotStatus::Ok);
        hipbot_scenario_free(s);
    }
    assert_eq!(metrics.seeds, 2);
    assert_eq!((metrics.suc, metrics.safe, metrics.goal_any), (1.0, 1.0, 1.0));
    assert!((metrics.ts_mean - (one.ts + two.ts) as f64 / 2.0).abs() < 1e-12);
}

#[test]
fn overrides_apply_and_round_trip_through_json() {
    let s = scenario(OPEN_WORLD);
    let set = |a: &str| unsafe { hipbot_scenario_set(s, CString::new(a).unwrap().as_ptr()) };
    assert_eq!(set("planner.horizon=4"), HipbotStatus::Ok);
    assert_eq!(set("planner.horizon=0"), HipbotStatus::Config);
    assert_eq!(set("no_equals_sign"), HipbotStatus::Config);

    let mut len = 0;
    assert_eq!(
        unsafe { hipbot_scenario_to_json(s, ptr::null_mut(), 0, &mut len) },
        HipbotStatus::Ok
    );
    let mut small = vec![0 as std::ffi::c_char; 4];
    assert_eq!(
        unsafe { hipbot_scenario_to_json(s, small.as_mut_ptr(), small.len(), &mut len) },
        HipbotStatus::InvalidArgument
    );
    let mut buf = vec![0 as std::ffi::c_char; len + 1];
    assert_eq!(
        unsafe { hipbot_scenario_to_json(s, buf.as_mut_ptr(), buf.len(), &mut len) },
        HipbotStatus::Ok
    );
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(doc["planner"]["horizon"], 4);

    let again = scenario(&json);
    unsafe {
        hipbot_scenario_free(again);
        hipbot_scenario_free(s);
    }
}

#[test]
fn scenario_files_load() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/box_static.json");
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { hipbot_scenario_load(c.as_ptr(), &mut s) }, HipbotStatus::Ok);
    unsafe { hipbot_scenario_free(s) };

    let missing = CString::new("/nonexistent/scenario.json").unwrap();
    assert_eq!(
        unsafe { hipbot_scenario_load(missing.as_ptr(), &mut s) },
        HipbotStatus::Io
    );
}

#[test]
fn null_handles_are_rejected_and_free_accepts_null() {
    let mut state = HipbotAgentState::default();
    let mut result = HipbotEpisodeResult::default();
    unsafe {
        assert_eq!(
            hipbot_episode_step(ptr::null_mut(), &mut state),
            HipbotStatus::NullPointer
        );
        assert_eq!(
            hipbot_episode_finish(ptr::null_mut(), &mut result),
            HipbotStatus::NullPointer
        );
        assert_eq!(
            hipbot_run_batch(ptr::null(), ptr::null_mut()),
            HipbotStatus::NullPointer
        );
        hipbot_scenario_free(ptr::null_mut());
        hipbot_episode_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(include.join("hipbot.h")).unwrap();
    for name in [
        "hipbot_solve_balanced",
        "hipbot_solve_unbalanced",
        "hipbot_episode_step",
        "hipbot_run_batch",
        "HIPBOT_STATUS_PANIC",
        "typedef struct HipbotScenario HipbotScenario;",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let probe = Command::new(compiler).arg("--version").output();
        if probe.is_err() {
            eprintln!("{compiler} not found; skipping syntax check");
            continue;
        }
        let out = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-"])
            .arg(format!("-I{}", include.display()))
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::piped())
            .spawn()
            .and_then(|mut child| {
                use std::io::Write;
                child
                    .stdin
                    .take()
                    .unwrap()
                    .write_all(b"#include \"hipbot.h\"\nint main(void) { return hipbot_version() ? 0 : 1; }\n")?;
                child.wait_with_output()
            })
            .unwrap();
        assert!(
            out.status.success(),
            "{compiler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
