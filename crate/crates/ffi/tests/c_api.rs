use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use persuasion_ffi::*;

const TWO_UNIFORM: &str = r#"{
    "schema": "persuasion.instance/v1",
    "buyers": [{"kind": "uniform", "lo": 0, "hi": 1}, {"kind": "uniform", "lo": 0, "hi": 1}],
    "quality": {
        "distribution": {"kind": "uniform", "lo": 0, "hi": 1},
        "alpha": {"kind": "constant", "value": 1},
        "reserve": {"kind": "constant", "value": 0}
    },
    "grid_size": 257
}"#;

fn build(json: &str) -> (PersuasionStatus, *mut PersuasionMechanism) {
    let c = CString::new(json).unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { persuasion_mechanism_build(c.as_ptr(), 0, &mut m) };
    (s, m)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(persuasion_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn build_query_and_free() {
    let (s, m) = build(TWO_UNIFORM);
    assert_eq!(s, PersuasionStatus::Ok);
    unsafe {
        let mut n = 0;
        assert_eq!(persuasion_num_buyers(m, &mut n), PersuasionStatus::Ok);
        assert_eq!(n, 2);

        let mut who = 7;
        assert_eq!(persuasion_allocate(m, [0.3, 0.8].as_ptr(), 2, 0.5, &mut who), PersuasionStatus::Ok);
        assert_eq!(who, 1);
        assert_eq!(persuasion_allocate(m, [0.3, 0.2].as_ptr(), 2, 0.5, &mut who), PersuasionStatus::Ok);
        assert_eq!(who, -1);

        let mut p = 0.0;
        assert_eq!(persuasion_payment(m, 0, 1.0, &mut p), PersuasionStatus::Ok);
        assert!((p - 0.625).abs() < 1e-6);

        let mut r = 0.0;
        assert_eq!(persuasion_revenue(m, &mut r), PersuasionStatus::Ok);
        assert!((r - 5.0 / 12.0).abs() < 1e-6);

        let (mut mean, mut se) = (0.0, 0.0);
        assert_eq!(persuasion_simulate(m, 20_000, 3, &mut mean, &mut se), PersuasionStatus::Ok);
        assert!((mean - 5.0 / 12.0).abs() < 4.0 * se);

        let mut json = ptr::null_mut();
        assert_eq!(persuasion_to_json(m, &mut json), PersuasionStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap().to_owned();
        persuasion_string_free(json);
        assert!(text.contains("persuasion.mechanism/v1"));

        persuasion_mechanism_free(m);
    }
}

#[test]
fn errors_carry_status_and_message() {
    let (s, m) = build("{ not json");
    assert_eq!(s, PersuasionStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("line 1"), "{}", last_error());

    let (s, m) = build(TWO_UNIFORM);
    assert_eq!(s, PersuasionStatus::Ok);
    unsafe {
        let mut p = 0.0;
        assert_eq!(persuasion_payment(m, 0, 0.1, &mut p), PersuasionStatus::Undefined);
        assert_eq!(persuasion_payment(m, 5, 0.9, &mut p), PersuasionStatus::InvalidArgument);
        let mut who = 0;
        assert_eq!(persuasion_allocate(m, [0.5].as_ptr(), 1, 0.5, &mut who), PersuasionStatus::InvalidArgument);
        assert_eq!(persuasion_revenue(m, ptr::null_mut()), PersuasionStatus::NullPointer);
        assert_eq!(persuasion_revenue(ptr::null(), &mut p), PersuasionStatus::NullPointer);
        assert!(last_error().contains("mechanism"));
        persuasion_mechanism_free(m);
        persuasion_mechanism_free(ptr::null_mut());
        persuasion_string_free(ptr::null_mut());
    }
}

#[test]
fn concave_general_valuation_is_an_assumption_error() {
    let json = TWO_UNIFORM.replace(
        r#""grid_size": 257"#,
        r#""grid_size": 65, "valuation": {"kind": "general",
            "value_type": {"kind": "power", "scale": 1, "exponent": 0.5},
            "value_quality": {"kind": "constant", "value": 1},
            "slope_type": {"kind": "power", "scale": 0.5, "exponent": -0.5},
            "slope_quality": {"kind": "constant", "value": 1}}"#,
    );
    let (s, m) = build(&json);
    assert_eq!(s, PersuasionStatus::Assumption, "{}", last_error());
    assert!(m.is_null());
}

#[test]
fn header_is_generated_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/persuasion.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "persuasion_mechanism_build",
        "persuasion_mechanism_free",
        "persuasion_allocate",
        "persuasion_payment",
        "persuasion_revenue",
        "persuasion_simulate",
        "persuasion_to_json",
        "persuasion_string_free",
        "persuasion_last_error",
        "typedef struct PersuasionMechanism PersuasionMechanism",
    ] {
        assert!(text.contains(f), "missing {f}");
    }
    // syntax check with the system C compiler, when there is one
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(
        &src,
        "#include <stdio.h>\n#include \"persuasion.h\"\nint main(void) { PersuasionMechanism *m = 0; \
         return (int)persuasion_num_buyers(m, 0) + (stderr == 0); }\n",
    )
    .unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; skipped the syntax check"),
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("persuasion-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}
