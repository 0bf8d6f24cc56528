//! C ABI over `upsilon-core`.
//!
//! Every function returns an [`UpsilonStatus`]; results come back through
//! out-pointers. On failure `upsilon_last_error()` describes what went wrong
//! on the calling thread. Handles are opaque and must be released with the
//! matching `_free` function. Strings returned by the library are owned by
//! the caller and released with [`upsilon_string_free`].
//!
//! ```c
//! UpsilonProgram *p = NULL;
//! if (upsilon_program_from_mnemonics("+>+<.", &p) != UPSILON_STATUS_OK) {
//!     fprintf(stderr, "%s\n", upsilon_last_error());
//! }
//! UpsilonProcess *e = NULL;
//! upsilon_process_new(p, 7, &e);
//! uint32_t o, r;
//! upsilon_process_step(e, -1, &o, &r);
//! upsilon_process_free(e);
//! upsilon_program_free(p);
//! ```

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use upsilon_core::config::RawConfig;
use upsilon_core::machine::bits::BitString;
use upsilon_core::machine::complexity::prior_weight;
use upsilon_core::machine::program::{decode_program, EnvProgram, OpcodeTable};
use upsilon_core::machine::vm::{EnvProcess, MachineConfig, RewardBudget};
use upsilon_core::report::{run, to_json};
use upsilon_core::seeding::{stream, ENV_STREAM};
use upsilon_core::SpaceConfig;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpsilonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidProgram = 3,
    InvalidConfig = 4,
    Runtime = 5,
    Panic = 6,
}

/// A decoded program.
pub struct UpsilonProgram(Arc<EnvProgram>);

/// A running environment process with the default machine and spaces.
pub struct UpsilonProcess {
    process: EnvProcess,
    space: SpaceConfig,
    started: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul bytes removed"));
}

fn fail(status: UpsilonStatus, message: impl Into<String>) -> UpsilonStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> UpsilonStatus) -> UpsilonStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(UpsilonStatus::Panic, "internal panic"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, UpsilonStatus> {
    if s.is_null() {
        return Err(fail(UpsilonStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(UpsilonStatus::InvalidArgument, "string is not UTF-8"))
}

fn give_string(s: String, out: *mut *mut c_char) -> UpsilonStatus {
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            UpsilonStatus::Ok
        }
        Err(_) => fail(UpsilonStatus::Runtime, "output contains a nul byte"),
    }
}

/// Message for the last failure on this thread. Valid until the next call
/// into the library from the same thread.
#[no_mangle]
pub extern "C" fn upsilon_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn upsilon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn upsilon_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Assemble a program from instruction mnemonics such as `"+[.]"`.
#[no_mangle]
pub unsafe extern "C" fn upsilon_program_from_mnemonics(
    source: *const c_char,
    out: *mut *mut UpsilonProgram,
) -> UpsilonStatus {
    guard(|| {
        if out.is_null() {
            return fail(UpsilonStatus::NullPointer, "null output pointer");
        }
        let src = match read_str(source) {
            Ok(s) => s,
            Err(s) => return s,
        };
        match EnvProgram::from_mnemonics(src, &OpcodeTable::canonical()) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(UpsilonProgram(Arc::new(p))));
                UpsilonStatus::Ok
            }
            Err(e) => fail(UpsilonStatus::InvalidProgram, e.to_string()),
        }
    })
}

/// Decode one fixture line such as `"len=11 hex=6500"`.
#[no_mangle]
pub unsafe extern "C" fn upsilon_program_from_fixture(
    line: *const c_char,
    out: *mut *mut UpsilonProgram,
) -> UpsilonStatus {
    guard(|| {
        if out.is_null() {
            return fail(UpsilonStatus::NullPointer, "null output pointer");
        }
        let line = match read_str(line) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let bits = match BitString::parse_fixture(line) {
            Ok(b) => b,
            Err(e) => return fail(UpsilonStatus::InvalidArgument, e.to_string()),
        };
        match decode_program(&bits, &OpcodeTable::canonical()) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(UpsilonProgram(Arc::new(p))));
                UpsilonStatus::Ok
            }
            Err(e) => fail(UpsilonStatus::InvalidProgram, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn upsilon_program_free(program: *mut UpsilonProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

#[no_mangle]
pub unsafe extern "C" fn upsilon_program_length_bits(program: *const UpsilonProgram, out: *mut u32) -> UpsilonStatus {
    guard(|| {
        if program.is_null() || out.is_null() {
            return fail(UpsilonStatus::NullPointer, "null pointer");
        }
        *out = (*program).0.length_bits();
        UpsilonStatus::Ok
    })
}

/// The prior weight `2^-|p|`.
#[no_mangle]
pub unsafe extern "C" fn upsilon_program_prior_weight(program: *const UpsilonProgram, out: *mut f64) -> UpsilonStatus {
    guard(|| {
        if program.is_null() || out.is_null() {
            return fail(UpsilonStatus::NullPointer, "null pointer");
        }
        *out = prior_weight(&(*program).0).to_f64();
        UpsilonStatus::Ok
    })
}

/// Fixture line with mnemonics, e.g. `"len=11 hex=6500 # +."`.
#[no_mangle]
pub unsafe extern "C" fn upsilon_program_describe(
    program: *const UpsilonProgram,
    out: *mut *mut c_char,
) -> UpsilonStatus {
    guard(|| {
        if program.is_null() || out.is_null() {
            return fail(UpsilonStatus::NullPointer, "null pointer");
        }
        give_string((*program).0.to_string(), out)
    })
}

/// Start a summable process for `program`. Random bits come from `seed`.
#[no_mangle]
pub unsafe extern "C" fn upsilon_process_new(
    program: *const UpsilonProgram,
    seed: u64,
    out: *mut *mut UpsilonProcess,
) -> UpsilonStatus {
    guard(|| {
        if program.is_null() || out.is_null() {
            return fail(UpsilonStatus::NullPointer, "null pointer");
        }
        let p = (*program).0.clone();
        let space = SpaceConfig::default();
        let rng = stream(seed, &[ENV_STREAM, p.id()]);
        let process = EnvProcess::new(p, &MachineConfig::default(), space, rng, RewardBudget::Summable);
        *out = Box::into_raw(Box::new(UpsilonProcess { process, space, started: false }));
        UpsilonStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn upsilon_process_free(process: *mut UpsilonProcess) {
    if !process.is_null() {
        drop(Box::from_raw(process));
    }
}

/// Run one cycle. `action` must be -1 on the first call and an action index
/// afterwards. The percept is written to `observation` and `reward`; the
/// reward is a numerator over 255.
#[no_mangle]
pub unsafe extern "C" fn upsilon_process_step(
    process: *mut UpsilonProcess,
    action: i32,
    observation: *mut u32,
    reward: *mut u32,
) -> UpsilonStatus {
    guard(|| {
        if process.is_null() || observation.is_null() || reward.is_null() {
            return fail(UpsilonStatus::NullPointer, "null pointer");
        }
        let proc = &mut *process;
        let action = match (proc.started, action) {
            (false, -1) => None,
            (false, _) => return fail(UpsilonStatus::InvalidArgument, "the first step takes no action (-1)"),
            (true, a) => match u32::try_from(a).ok().and_then(|a| proc.space.action(a).ok()) {
                Some(a) => Some(a),
                None => return fail(UpsilonStatus::InvalidArgument, format!("action {a} out of range")),
            },
        };
        proc.started = true;
        let p = proc.process.step(action);
        *observation = p.observation;
        *reward = p.reward;
        UpsilonStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn upsilon_process_is_halted(process: *const UpsilonProcess, out: *mut bool) -> UpsilonStatus {
    guard(|| {
        if process.is_null() || out.is_null() {
            return fail(UpsilonStatus::NullPointer, "null pointer");
        }
        *out = (*process).process.is_halted();
        UpsilonStatus::Ok
    })
}

/// Run the benchmark described by TOML `config` and return the JSON report.
/// Nothing is written to disk.
#[no_mangle]
pub unsafe extern "C" fn upsilon_run_config(config: *const c_char, report_json: *mut *mut c_char) -> UpsilonStatus {
    guard(|| {
        if report_json.is_null() {
            return fail(UpsilonStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(config) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let cfg = match RawConfig::parse(text).and_then(|r| r.resolve()) {
            Ok(c) => c,
            Err(e) => return fail(UpsilonStatus::InvalidConfig, e.to_string()),
        };
        match run(&cfg) {
            Ok(report) => give_string(to_json(&report), report_json),
            Err(e) => fail(UpsilonStatus::Runtime, e.to_string()),
        }
    })
}
