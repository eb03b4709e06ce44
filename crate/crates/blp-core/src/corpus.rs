//! Built-in instance corpus. Every entry carries expectations whose values
//! were fixed ahead of time (closed forms, hand-solved certificates, or
//! brute-force grid oracles, as stated per expectation) and `corpus_check`
//! replays them; it is the end-to-end gate of the repository.

use crate::calmness::{
    estimate_peb_modulus, estimate_uwsm_modulus, verify_partial_calmness, Condition,
    ModulusVerdict,
};
use crate::classify::{classify_point, classify_simplicity, PointType, SimplicityCase};
use crate::continuation::{solve_bilevel, solve_lower_global, trace_branch, Termination, TraceOptions};
use crate::multipliers::{fj_multipliers, kkt_multipliers, MultiplierKind};
use crate::problem::{load_problem, BilevelProblem};
use crate::stationarity::{check_optimality_direct, cross_validate, mpcc_licq, MpccMultiplier, Verdict};
use serde::Serialize;

type CheckResult = std::result::Result<(), String>;

pub struct Expectation {
    pub what: &'static str,
    /// How the expected value was established.
    pub basis: &'static str,
    pub run: fn(&BilevelProblem) -> CheckResult,
}

pub struct CorpusEntry {
    pub name: &'static str,
    pub source: &'static str,
    pub expectations: Vec<Expectation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CorpusOutcome {
    pub entry: String,
    pub expectation: String,
    pub basis: String,
    pub passed: bool,
    pub detail: String,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn near(label: &str, got: f64, want: f64, tol: f64) -> CheckResult {
    if (got - want).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{label}: got {got}, want {want} (tol {tol})"))
    }
}

fn vec_near(label: &str, got: &[f64], want: &[f64], tol: f64) -> CheckResult {
    if got.len() != want.len() {
        return Err(format!("{label}: got {} entries, want {}", got.len(), want.len()));
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        near(&format!("{label}[{i}]"), *g, *w, tol)?;
    }
    Ok(())
}

fn check(cond: bool, detail: String) -> CheckResult {
    if cond {
        Ok(())
    } else {
        Err(detail)
    }
}

fn has_vertex(vertices: &[Vec<f64>], want: &[f64], tol: f64) -> bool {
    vertices
        .iter()
        .any(|v| v.len() == want.len() && v.iter().zip(want).all(|(a, b)| (a - b).abs() <= tol))
}

const EXAMPLE_JS: &str = r#"[problem]
n = 1
m = 2
p = 1
q = 0

[upper]
F = "x + y1 + y2"

[lower]
f = "-y1"
g1 = "y1^2 + y2^2 - x"

[box]
x = -1, 1
y1 = -1.5, 1.5
y2 = -1.5, 1.5

[tolerances]
grid = 120
"#;

const EXAMPLE_JS_M1: &str = r#"[problem]
n = 1
m = 1
p = 1
q = 0

[upper]
F = "x + y1"

[lower]
f = "-y1"
g1 = "y1^2 - x"

[box]
x = -1, 1
y1 = -1.5, 1.5
"#;

const QUADRATIC: &str = r#"[problem]
n = 1
m = 1
p = 0
q = 0

[upper]
F = "(x - 1)^2 + y1^2"

[lower]
f = "(y1 - x)^2"

[box]
x = -1, 2
y1 = -2, 2
"#;

const TYPE2_KINK: &str = r#"[problem]
n = 1
m = 1
p = 1
q = 0

[upper]
F = "(x - 1)^2 + (y1 - 1)^2"

[lower]
f = "y1^2"
g1 = "x - y1"

[box]
x = -1, 2
y1 = -2, 2
"#;

const TYPE51_CORNER: &str = r#"[problem]
n = 1
m = 1
p = 2
q = 0

[upper]
F = "x + y1^2"

[lower]
f = "y1"
g1 = "y1 - x"
g2 = "-y1 - x"

[box]
x = -1, 1
y1 = -2, 2
"#;

const TYPE52_CORNER: &str = r#"[problem]
n = 1
m = 2
p = 3
q = 0

[upper]
F = "x^2 + y1^2"

[lower]
f = "-y1 - y2"
g1 = "y1 - x"
g2 = "y2 - x"
g3 = "y1 + 2*y2 - x"

[box]
x = -1, 1
y1 = -2, 2
y2 = -2, 2

[tolerances]
grid = 120
"#;

const DOUBLE_WELL: &str = r#"[problem]
n = 1
m = 1
p = 0
q = 0

[upper]
F = "-y1"

[lower]
f = "y1^4 / 4 - y1^2 / 2 + x * y1"

[box]
x = -0.8, 0.8
y1 = -2.5, 2.5
"#;

const PRINCIPAL_AGENT: &str = r#"[problem]
n = 1
m = 1
p = 2
q = 0

[upper]
F = "y1*((y1^2/2 + (1 - y1)*x)^2 - 0.75) + (1 - y1)*(y1^2/2 - y1*x)^2"

[lower]
f = "-x*y1 + y1^2/2"
g1 = "-y1"
g2 = "y1 - 1"

[box]
x = 0, 1
y1 = -0.5, 1.5
"#;

const DUPLICATE_CONSTRAINT: &str = r#"[problem]
n = 1
m = 1
p = 2
q = 0

[upper]
F = "x^2 + y1^2"

[lower]
f = "y1^2"
g1 = "y1 - x"
g2 = "y1 - x"

[box]
x = -1, 1
y1 = -2, 2
"#;

/// Problem text of a built-in instance.
pub fn builtin(name: &str) -> Option<&'static str> {
    Some(match name {
        "example-js" => EXAMPLE_JS,
        "example-js-m1" => EXAMPLE_JS_M1,
        "quadratic" => QUADRATIC,
        "type2-kink" => TYPE2_KINK,
        "type51-corner" => TYPE51_CORNER,
        "type52-corner" => TYPE52_CORNER,
        "double-well" => DOUBLE_WELL,
        "principal-agent-binary" => PRINCIPAL_AGENT,
        "duplicate-constraint" => DUPLICATE_CONSTRAINT,
        _ => return None,
    })
}

pub fn builtin_names() -> Vec<&'static str> {
    vec![
        "example-js",
        "example-js-m1",
        "quadratic",
        "type2-kink",
        "type51-corner",
        "type52-corner",
        "double-well",
        "principal-agent-binary",
        "duplicate-constraint",
    ]
}

pub fn entries() -> Vec<CorpusEntry> {
    vec![
        CorpusEntry {
            name: "example-js",
            source: EXAMPLE_JS,
            expectations: vec![
                Expectation {
                    what: "origin classifies as type 4 at x = 0",
                    basis: "closed form: the active gradient vanishes and no KKT multiplier exists",
                    run: |p| {
                        let c = classify_point(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        check(c.point_type == PointType::Type4, format!("got {:?}", c.point_type))
                    },
                },
                Expectation {
                    what: "FJ set is the abnormal singleton (0, 1)",
                    basis: "closed form of the normalized stationarity system",
                    run: |p| {
                        let fj = fj_multipliers(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        check(
                            fj.kind == MultiplierKind::Singleton
                                && has_vertex(&fj.vertices, &[0.0, 1.0], 1e-9),
                            format!("got {:?} {:?}", fj.kind, fj.vertices),
                        )
                    },
                },
                Expectation {
                    what: "KKT set is empty at the origin",
                    basis: "closed form: stationarity has no solution with u0 = 1",
                    run: |p| {
                        let kkt = kkt_multipliers(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        check(kkt.kind == MultiplierKind::Empty, format!("got {:?}", kkt.kind))
                    },
                },
                Expectation {
                    what: "x = 0 is simple of the single-solution kind",
                    basis: "grid oracle: unique global minimizer at the origin",
                    run: |p| {
                        let rep = classify_simplicity(p, 0.0, Some(&[0.0, 0.0])).map_err(err)?;
                        check(rep.case == SimplicityCase::CaseI, format!("got {:?}", rep.case))
                    },
                },
                Expectation {
                    what: "direct certificate w = (1/2, 1/2), xi = 1 validates",
                    basis: "hand-solved certificate system",
                    run: |p| {
                        let cls = classify_point(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        let rep = check_optimality_direct(p, 0.0, &[0.0, 0.0], &cls).map_err(err)?;
                        check(rep.case == 3 && rep.verdict == Verdict::Satisfied, format!("case {} verdict {:?}", rep.case, rep.verdict))?;
                        let cert = rep.certificate.ok_or("missing certificate")?;
                        vec_near("w", &cert.w, &[0.5, 0.5], 1e-9)?;
                        vec_near("xi", &cert.xi, &[1.0], 1e-9)
                    },
                },
                Expectation {
                    what: "direct and implicit verdicts agree (satisfied)",
                    basis: "hand derivative of the one-sided branch",
                    run: |p| {
                        let cv = cross_validate(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        check(
                            cv.agreement && cv.direct.verdict == Verdict::Satisfied,
                            format!("direct {:?} implicit {:?}", cv.direct.verdict, cv.implicit.verdict),
                        )
                    },
                },
                Expectation {
                    what: "MPCC-LICQ holds at the abnormal multiplier",
                    basis: "hand-assembled block matrix has independent columns",
                    run: |p| {
                        let rep = mpcc_licq(p, 0.0, &[0.0, 0.0], &MpccMultiplier::Fj { u0: 0.0, u: vec![1.0] })
                            .map_err(err)?;
                        check(rep.full_column_rank, format!("singular values {:?}", rep.singular_values))
                    },
                },
                Expectation {
                    what: "V(1/4) = -1/2 with minimizer (1/2, 0)",
                    basis: "closed form: V(x) = -sqrt(x) on the feasible range",
                    run: |p| {
                        let sol = solve_lower_global(p, 0.25).map_err(err)?;
                        near("V", sol.value, -0.5, 1e-8)?;
                        check(
                            has_vertex(&sol.minimizers, &[0.5, 0.0], 1e-6),
                            format!("minimizers {:?}", sol.minimizers),
                        )
                    },
                },
                Expectation {
                    what: "bilevel optimum (0, (0, 0)) with F = 0",
                    basis: "grid oracle over the parameter box",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, 0.0, 1e-6)?;
                        near("F", sol.upper_value, 0.0, 1e-3)?;
                        vec_near("y", &sol.y, &[0.0, 0.0], 0.05)
                    },
                },
                Expectation {
                    what: "branch trace toward x = 0 stops on conditioning loss",
                    basis: "branch Jacobian condition number grows like 1/sqrt(x)",
                    run: |p| {
                        let tr = trace_branch(
                            p,
                            0.25,
                            &[0.5, 0.0],
                            Some(&[1.0]),
                            &TraceOptions { x_end: 0.0, step: 0.01, active: None },
                        )
                        .map_err(err)?;
                        let ok = matches!(
                            tr.termination,
                            Termination::LicqLoss | Termination::CorrectorFailure
                        );
                        let x_last = tr.points.last().map_or(f64::NAN, |pt| pt.x);
                        check(
                            ok && x_last.abs() <= 1e-2,
                            format!("termination {:?} at x = {x_last}", tr.termination),
                        )
                    },
                },
            ],
        },
        CorpusEntry {
            name: "example-js-m1",
            source: EXAMPLE_JS_M1,
            expectations: vec![
                Expectation {
                    what: "origin classifies as type 4 at x = 0",
                    basis: "closed form, one-dimensional reduction of the same instance",
                    run: |p| {
                        let c = classify_point(p, 0.0, &[0.0]).map_err(err)?;
                        check(c.point_type == PointType::Type4, format!("got {:?}", c.point_type))
                    },
                },
                Expectation {
                    what: "sharp-minimum modulus over the feasible set is 1",
                    basis: "closed form: distance and gap coincide on every feasible ray",
                    run: |p| {
                        let rep = estimate_uwsm_modulus(p, 0.0, &[0.0], 0.5, 512, Condition::Feasible, 0)
                            .map_err(err)?;
                        match rep.verdict {
                            ModulusVerdict::HoldsWithModulus { l } => near("L", l, 1.0, 0.05),
                            other => Err(format!("got {other:?}")),
                        }
                    },
                },
                Expectation {
                    what: "bilevel optimum at x = 0 with F = 0",
                    basis: "closed form: F = x + sqrt(x) is increasing on the feasible range",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, 0.0, 1e-6)?;
                        near("F", sol.upper_value, 0.0, 1e-3)
                    },
                },
            ],
        },
        CorpusEntry {
            name: "quadratic",
            source: QUADRATIC,
            expectations: vec![
                Expectation {
                    what: "(1/2, 1/2) classifies as type 1",
                    basis: "closed form: positive definite Hessian, no constraints",
                    run: |p| {
                        let c = classify_point(p, 0.5, &[0.5]).map_err(err)?;
                        check(c.point_type == PointType::Type1, format!("got {:?}", c.point_type))
                    },
                },
                Expectation {
                    what: "optimality holds at (1/2, 1/2) in both forms, w = 1/2",
                    basis: "hand solve of the two stationarity equations",
                    run: |p| {
                        let cv = cross_validate(p, 0.5, &[0.5]).map_err(err)?;
                        check(
                            cv.case == 1 && cv.agreement && cv.direct.verdict == Verdict::Satisfied,
                            format!("case {} direct {:?} implicit {:?}", cv.case, cv.direct.verdict, cv.implicit.verdict),
                        )?;
                        let w = cv.direct.certificate.ok_or("missing certificate")?.w;
                        vec_near("w", &w, &[0.5], 1e-9)
                    },
                },
                Expectation {
                    what: "optimality fails at (0, 0) in both forms",
                    basis: "hand substitution leaves a residual of 2 in the second equation",
                    run: |p| {
                        let cv = cross_validate(p, 0.0, &[0.0]).map_err(err)?;
                        check(
                            cv.agreement && cv.direct.verdict == Verdict::NotSatisfied,
                            format!("direct {:?} implicit {:?}", cv.direct.verdict, cv.implicit.verdict),
                        )
                    },
                },
                Expectation {
                    what: "bilevel optimum (1/2, 1/2) with F = 1/2",
                    basis: "closed form: minimize (x-1)^2 + x^2 along the solution map y = x",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, 0.5, 1e-6)?;
                        near("y", sol.y[0], 0.5, 1e-6)?;
                        near("F", sol.upper_value, 0.5, 1e-7)
                    },
                },
                Expectation {
                    what: "modulus over stationary points is zero near the optimum",
                    basis: "stationary points of the strictly convex lower level are its minimizers",
                    run: |p| {
                        let rep = estimate_uwsm_modulus(p, 0.5, &[0.5], 0.3, 200, Condition::Fj, 0)
                            .map_err(err)?;
                        check(rep.verdict == ModulusVerdict::NumeratorZero, format!("got {:?}", rep.verdict))
                    },
                },
            ],
        },
        CorpusEntry {
            name: "type2-kink",
            source: TYPE2_KINK,
            expectations: vec![
                Expectation {
                    what: "(0, 0) classifies as type 2 with g1 vanishing",
                    basis: "closed form: active constraint with zero multiplier, positive curvature",
                    run: |p| {
                        let c = classify_point(p, 0.0, &[0.0]).map_err(err)?;
                        check(
                            c.point_type == PointType::Type2 { vanishing_index: 0 },
                            format!("got {:?}", c.point_type),
                        )
                    },
                },
                Expectation {
                    what: "(1, 1) classifies as type 1",
                    basis: "closed form: multiplier u = 2x is strictly positive",
                    run: |p| {
                        let c = classify_point(p, 1.0, &[1.0]).map_err(err)?;
                        check(c.point_type == PointType::Type1, format!("got {:?}", c.point_type))
                    },
                },
                Expectation {
                    what: "optimality holds at (1, 1) and fails at (0, 0), forms agreeing",
                    basis: "hand solve on the branch y = x for x >= 0",
                    run: |p| {
                        let opt = cross_validate(p, 1.0, &[1.0]).map_err(err)?;
                        check(
                            opt.agreement && opt.direct.verdict == Verdict::Satisfied,
                            format!("at optimum: direct {:?} implicit {:?}", opt.direct.verdict, opt.implicit.verdict),
                        )?;
                        let kink = cross_validate(p, 0.0, &[0.0]).map_err(err)?;
                        check(
                            kink.case == 2
                                && kink.agreement
                                && kink.direct.verdict == Verdict::NotSatisfied,
                            format!("at kink: case {} direct {:?} implicit {:?}", kink.case, kink.direct.verdict, kink.implicit.verdict),
                        )
                    },
                },
                Expectation {
                    what: "tracing the active branch left from x = 1/2 stops where u = 2x vanishes",
                    basis: "closed form for the branch multiplier",
                    run: |p| {
                        let tr = trace_branch(
                            p,
                            0.5,
                            &[0.5],
                            None,
                            &TraceOptions { x_end: -1.0, step: 0.05, active: None },
                        )
                        .map_err(err)?;
                        check(
                            tr.termination == Termination::MultiplierZero { index: 0 },
                            format!("termination {:?}", tr.termination),
                        )?;
                        let xe = tr.event_x.ok_or("missing event location")?;
                        near("event x", xe, 0.0, 2e-6)
                    },
                },
                Expectation {
                    what: "V(-1/2) = 0 and V(1/2) = 1/4",
                    basis: "closed form: V(x) = 0 for x <= 0, x^2 after",
                    run: |p| {
                        near("V(-1/2)", solve_lower_global(p, -0.5).map_err(err)?.value, 0.0, 1e-9)?;
                        near("V(1/2)", solve_lower_global(p, 0.5).map_err(err)?.value, 0.25, 1e-9)
                    },
                },
                Expectation {
                    what: "bilevel optimum (1, 1) with F = 0",
                    basis: "closed form: both squared terms vanish there",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, 1.0, 1e-6)?;
                        near("y", sol.y[0], 1.0, 1e-6)?;
                        near("F", sol.upper_value, 0.0, 1e-9)
                    },
                },
            ],
        },
        CorpusEntry {
            name: "type51-corner",
            source: TYPE51_CORNER,
            expectations: vec![
                Expectation {
                    what: "(0, 0) classifies as type 5-1",
                    basis: "closed form: two active constraints in one variable, KKT ray, MFCQ fails",
                    run: |p| {
                        let c = classify_point(p, 0.0, &[0.0]).map_err(err)?;
                        check(c.point_type == PointType::Type51, format!("got {:?}", c.point_type))?;
                        let mfcq = c.mfcq.ok_or("missing MFCQ report")?;
                        check(!mfcq.holds, format!("MFCQ margin {}", mfcq.margin))
                    },
                },
                Expectation {
                    what: "KKT set is the ray from (0, 1) with direction (1, 1)",
                    basis: "hand solve of 1 + u1 - u2 = 0 over the nonnegative orthant",
                    run: |p| {
                        let kkt = kkt_multipliers(p, 0.0, &[0.0]).map_err(err)?;
                        check(kkt.kind == MultiplierKind::Ray, format!("got {:?}", kkt.kind))?;
                        check(
                            has_vertex(&kkt.vertices, &[0.0, 1.0], 1e-9),
                            format!("vertices {:?}", kkt.vertices),
                        )?;
                        check(
                            has_vertex(&kkt.rays, &[0.5, 0.5], 1e-9),
                            format!("rays {:?}", kkt.rays),
                        )
                    },
                },
                Expectation {
                    what: "FJ set is the segment between (1/2, 0, 1/2) and (0, 1/2, 1/2)",
                    basis: "hand solve of the normalized system",
                    run: |p| {
                        let fj = fj_multipliers(p, 0.0, &[0.0]).map_err(err)?;
                        check(fj.kind == MultiplierKind::Segment, format!("got {:?}", fj.kind))?;
                        check(
                            has_vertex(&fj.vertices, &[0.5, 0.0, 0.5], 1e-9)
                                && has_vertex(&fj.vertices, &[0.0, 0.5, 0.5], 1e-9),
                            format!("vertices {:?}", fj.vertices),
                        )
                    },
                },
                Expectation {
                    what: "optimality holds in both forms with xi = (1/2, 1/2)",
                    basis: "hand-solved full-gradient system",
                    run: |p| {
                        let cv = cross_validate(p, 0.0, &[0.0]).map_err(err)?;
                        check(
                            cv.case == 4 && cv.agreement && cv.direct.verdict == Verdict::Satisfied,
                            format!("case {} direct {:?} implicit {:?}", cv.case, cv.direct.verdict, cv.implicit.verdict),
                        )?;
                        let cert = cv.direct.certificate.ok_or("missing certificate")?;
                        vec_near("xi", &cert.xi, &[0.5, 0.5], 1e-9)
                    },
                },
                Expectation {
                    what: "bilevel optimum (0, 0) with F = 0",
                    basis: "closed form: F = x + x^2 on the solution map y = -x, x >= 0",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, 0.0, 1e-6)?;
                        near("F", sol.upper_value, 0.0, 1e-6)
                    },
                },
            ],
        },
        CorpusEntry {
            name: "type52-corner",
            source: TYPE52_CORNER,
            expectations: vec![
                Expectation {
                    what: "(0, (0, 0)) classifies as type 5-2 with MFCQ",
                    basis: "direct construction: three active constraints, independent full gradients",
                    run: |p| {
                        let c = classify_point(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        check(c.point_type == PointType::Type52, format!("got {:?}", c.point_type))?;
                        let mfcq = c.mfcq.ok_or("missing MFCQ report")?;
                        check(mfcq.holds, format!("MFCQ margin {}", mfcq.margin))
                    },
                },
                Expectation {
                    what: "KKT set is the segment from (1, 1, 0) to (1/2, 0, 1/2)",
                    basis: "hand solve of the two stationarity equations",
                    run: |p| {
                        let kkt = kkt_multipliers(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        check(kkt.kind == MultiplierKind::Segment, format!("got {:?}", kkt.kind))?;
                        check(
                            has_vertex(&kkt.vertices, &[1.0, 1.0, 0.0], 1e-9)
                                && has_vertex(&kkt.vertices, &[0.5, 0.0, 0.5], 1e-9),
                            format!("vertices {:?}", kkt.vertices),
                        )
                    },
                },
                Expectation {
                    what: "optimality holds in both forms with xi = 0",
                    basis: "hand solve: the upper gradient vanishes at the corner",
                    run: |p| {
                        let cv = cross_validate(p, 0.0, &[0.0, 0.0]).map_err(err)?;
                        check(
                            cv.case == 5 && cv.agreement && cv.direct.verdict == Verdict::Satisfied,
                            format!("case {} direct {:?} implicit {:?}", cv.case, cv.direct.verdict, cv.implicit.verdict),
                        )?;
                        let cert = cv.direct.certificate.ok_or("missing certificate")?;
                        check(cert.xi.iter().all(|v| v.abs() <= 1e-9), format!("xi {:?}", cert.xi))
                    },
                },
                Expectation {
                    what: "S(1/2) = {(1/2, 0)} with value -1/2",
                    basis: "brute-force oracle on the linear program",
                    run: |p| {
                        let sol = solve_lower_global(p, 0.5).map_err(err)?;
                        near("V", sol.value, -0.5, 1e-8)?;
                        check(sol.minimizers.len() == 1, format!("minimizers {:?}", sol.minimizers))?;
                        vec_near("y", &sol.minimizers[0], &[0.5, 0.0], 1e-6)
                    },
                },
                Expectation {
                    what: "bilevel optimum (0, (0, 0)) with F = 0",
                    basis: "grid oracle over the parameter box",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, 0.0, 1e-6)?;
                        near("F", sol.upper_value, 0.0, 1e-9)?;
                        vec_near("y", &sol.y, &[0.0, 0.0], 1e-5)
                    },
                },
            ],
        },
        CorpusEntry {
            name: "double-well",
            source: DOUBLE_WELL,
            expectations: vec![
                Expectation {
                    what: "x = 0 splits into two branches with separation slope 2",
                    basis: "closed form: the wells sit at -1 and +1 with value -1/4",
                    run: |p| {
                        let rep = classify_simplicity(p, 0.0, Some(&[-1.0])).map_err(err)?;
                        match rep.case {
                            SimplicityCase::CaseII { alpha, .. } => {
                                near("alpha", alpha, 2.0, 1e-6)?;
                                near("V", rep.value, -0.25, 1e-9)?;
                                near("first branch", rep.minimizers[0][0], -1.0, 1e-8)?;
                                near("second branch", rep.minimizers[1][0], 1.0, 1e-8)
                            }
                            other => Err(format!("got {other:?}")),
                        }
                    },
                },
                Expectation {
                    what: "each well classifies as type 1",
                    basis: "closed form: curvature 3y^2 - 1 = 2 at both wells",
                    run: |p| {
                        for y in [-1.0, 1.0] {
                            let c = classify_point(p, 0.0, &[y]).map_err(err)?;
                            check(c.point_type == PointType::Type1, format!("at {y}: {:?}", c.point_type))?;
                        }
                        Ok(())
                    },
                },
                Expectation {
                    what: "split-case optimality holds at (0, -1) and fails at (0, +1)",
                    basis: "hand solve: lambda = 1/(4 mu) is a convex weight only on the lower branch",
                    run: |p| {
                        let low = cross_validate(p, 0.0, &[-1.0]).map_err(err)?;
                        check(
                            low.case == 6 && low.agreement && low.direct.verdict == Verdict::Satisfied,
                            format!("lower branch: direct {:?} implicit {:?}", low.direct.verdict, low.implicit.verdict),
                        )?;
                        let cert = low.direct.certificate.ok_or("missing certificate")?;
                        near("w", cert.w[0], -0.5, 1e-8)?;
                        let high = cross_validate(p, 0.0, &[1.0]).map_err(err)?;
                        check(
                            high.agreement && high.direct.verdict == Verdict::NotSatisfied,
                            format!("upper branch: direct {:?} implicit {:?}", high.direct.verdict, high.implicit.verdict),
                        )
                    },
                },
                Expectation {
                    what: "error-bound modulus near (0, -1) is finite, within [0.3, 1.2]",
                    basis: "branch geometry: the ratio is bounded by the inverse separation slope",
                    run: |p| {
                        let rep = estimate_peb_modulus(p, 0.0, &[-1.0], 0.5, f64::INFINITY, 200, 0)
                            .map_err(err)?;
                        match rep.verdict {
                            ModulusVerdict::HoldsWithModulus { l } => {
                                check((0.3..=1.2).contains(&l), format!("L = {l}"))
                            }
                            other => Err(format!("got {other:?}")),
                        }
                    },
                },
                Expectation {
                    what: "partial calmness fails at mu = 0 and holds at mu = 0.7",
                    basis: "hand bound: the stationary branch needs mu >= 1/4",
                    run: |p| {
                        let r0 = verify_partial_calmness(p, 0.0, &[-1.0], 0.0, 0.5, 200, Condition::Kkt, 0)
                            .map_err(err)?;
                        check(!r0.holds, format!("mu = 0 min {}", r0.min_value))?;
                        let r1 = verify_partial_calmness(p, 0.0, &[-1.0], 0.7, 0.5, 200, Condition::Kkt, 0)
                            .map_err(err)?;
                        check(r1.holds, format!("mu = 0.7 min {}", r1.min_value))
                    },
                },
                Expectation {
                    what: "box-global bilevel optimum sits at the left edge x = -0.8",
                    basis: "grid oracle: F = -y is lowest on the upper branch, which improves leftward",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, -0.8, 1e-9)?;
                        near("y", sol.y[0], 1.2756, 1e-3)?;
                        check(sol.boundary, "expected a boundary report".to_string())
                    },
                },
            ],
        },
        CorpusEntry {
            name: "principal-agent-binary",
            source: PRINCIPAL_AGENT,
            expectations: vec![
                Expectation {
                    what: "(1, 1) classifies as type 2 with the cap constraint vanishing",
                    basis: "closed form: the agent's unconstrained optimum reaches the cap exactly",
                    run: |p| {
                        let c = classify_point(p, 1.0, &[1.0]).map_err(err)?;
                        check(
                            c.point_type == PointType::Type2 { vanishing_index: 1 },
                            format!("got {:?}", c.point_type),
                        )
                    },
                },
                Expectation {
                    what: "optimality holds at (1, 1) with xi = 3/4 on the cap",
                    basis: "hand solve of the reduced certificate system",
                    run: |p| {
                        let cv = cross_validate(p, 1.0, &[1.0]).map_err(err)?;
                        check(
                            cv.case == 2 && cv.agreement && cv.direct.verdict == Verdict::Satisfied,
                            format!("case {} direct {:?} implicit {:?}", cv.case, cv.direct.verdict, cv.implicit.verdict),
                        )?;
                        let cert = cv.direct.certificate.ok_or("missing certificate")?;
                        near("w", cert.w[0], 0.0, 1e-9)?;
                        let t = cert.active.iter().position(|&j| j == 1).ok_or("g2 not active")?;
                        near("xi", cert.xi[t], 0.75, 1e-9)
                    },
                },
                Expectation {
                    what: "agent's response at x = 1/2 is y = 1/2 with value -1/8",
                    basis: "closed form: interior optimum y = x",
                    run: |p| {
                        let sol = solve_lower_global(p, 0.5).map_err(err)?;
                        near("V", sol.value, -0.125, 1e-9)?;
                        vec_near("y", &sol.minimizers[0], &[0.5], 1e-7)
                    },
                },
                Expectation {
                    what: "bilevel optimum (1, 1) with F = -1/2",
                    basis: "grid oracle over the contract range",
                    run: |p| {
                        let sol = solve_bilevel(p).map_err(err)?;
                        near("x", sol.x, 1.0, 1e-9)?;
                        near("y", sol.y[0], 1.0, 1e-7)?;
                        near("F", sol.upper_value, -0.5, 1e-7)?;
                        check(sol.boundary, "expected a boundary report".to_string())
                    },
                },
            ],
        },
        CorpusEntry {
            name: "duplicate-constraint",
            source: DUPLICATE_CONSTRAINT,
            expectations: vec![
                Expectation {
                    what: "(0, 0) is not classifiable",
                    basis: "direct construction: duplicated gradients break every generic pattern",
                    run: |p| {
                        let c = classify_point(p, 0.0, &[0.0]).map_err(err)?;
                        check(
                            matches!(c.point_type, PointType::NotClassifiable { .. }),
                            format!("got {:?}", c.point_type),
                        )
                    },
                },
                Expectation {
                    what: "KKT set at (0, 0) is the singleton (0, 0)",
                    basis: "closed form: the lower gradient already vanishes",
                    run: |p| {
                        let kkt = kkt_multipliers(p, 0.0, &[0.0]).map_err(err)?;
                        check(
                            kkt.kind == MultiplierKind::Singleton
                                && has_vertex(&kkt.vertices, &[0.0, 0.0], 1e-9),
                            format!("got {:?} {:?}", kkt.kind, kkt.vertices),
                        )
                    },
                },
                Expectation {
                    what: "MPCC-LICQ fails at (0, 0)",
                    basis: "duplicated columns can never be independent",
                    run: |p| {
                        let rep = mpcc_licq(p, 0.0, &[0.0], &MpccMultiplier::Kkt(vec![0.0, 0.0]))
                            .map_err(err)?;
                        check(!rep.full_column_rank, "matrix unexpectedly has full rank".to_string())
                    },
                },
                Expectation {
                    what: "optimality checks refuse the unclassifiable point",
                    basis: "the covered cases require a recognized type",
                    run: |p| {
                        let c = classify_point(p, 0.0, &[0.0]).map_err(err)?;
                        match check_optimality_direct(p, 0.0, &[0.0], &c) {
                            Err(crate::Error::Precondition(_)) => Ok(()),
                            Err(other) => Err(format!("unexpected error {other}")),
                            Ok(rep) => Err(format!("unexpectedly produced a verdict {:?}", rep.verdict)),
                        }
                    },
                },
                Expectation {
                    what: "away from the fold, (1, 0) is type 1 but not bilevel-stationary",
                    basis: "hand substitution: the upper x-gradient is 2 on the flat branch",
                    run: |p| {
                        let cv = cross_validate(p, 1.0, &[0.0]).map_err(err)?;
                        check(
                            cv.case == 1
                                && cv.agreement
                                && cv.direct.verdict == Verdict::NotSatisfied,
                            format!("case {} direct {:?} implicit {:?}", cv.case, cv.direct.verdict, cv.implicit.verdict),
                        )
                    },
                },
            ],
        },
    ]
}

/// Run one entry's expectations against its (possibly modified) problem.
pub fn run_entry(entry: &CorpusEntry, modify: &dyn Fn(&mut BilevelProblem)) -> Vec<CorpusOutcome> {
    let mut out = Vec::with_capacity(entry.expectations.len());
    let problem = match load_problem(entry.source) {
        Ok(mut p) => {
            modify(&mut p);
            p
        }
        Err(e) => {
            out.push(CorpusOutcome {
                entry: entry.name.to_string(),
                expectation: "problem text loads".to_string(),
                basis: "builtin source".to_string(),
                passed: false,
                detail: e.to_string(),
            });
            return out;
        }
    };
    for exp in &entry.expectations {
        let result = (exp.run)(&problem);
        out.push(CorpusOutcome {
            entry: entry.name.to_string(),
            expectation: exp.what.to_string(),
            basis: exp.basis.to_string(),
            passed: result.is_ok(),
            detail: result.err().unwrap_or_default(),
        });
    }
    out
}

/// Replay every expectation of every entry.
pub fn corpus_check() -> Vec<CorpusOutcome> {
    corpus_check_with(&|_| {})
}

/// Replay the corpus with a modification applied to each loaded problem
/// first (tolerance sensitivity studies and similar).
pub fn corpus_check_with(modify: &dyn Fn(&mut BilevelProblem)) -> Vec<CorpusOutcome> {
    let mut out = Vec::new();
    for entry in entries() {
        out.extend(run_entry(&entry, modify));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_resolve_and_load() {
        for name in builtin_names() {
            let src = builtin(name).expect("known name");
            let p = load_problem(src).expect(name);
            assert!(p.bounds.is_some(), "{name} must declare a box");
        }
        assert!(builtin("no-such-entry").is_none());
    }

    #[test]
    fn corrupted_expectation_fails_and_names_the_entry() {
        let entry = CorpusEntry {
            name: "quadratic",
            source: QUADRATIC,
            expectations: vec![Expectation {
                what: "deliberately wrong optimum",
                basis: "corruption fixture",
                run: |p| {
                    let sol = solve_bilevel(p).map_err(err)?;
                    near("x", sol.x, 0.9, 1e-6)
                },
            }],
        };
        let outcomes = run_entry(&entry, &|_| {});
        assert_eq!(outcomes.len(), 1);
        assert!(!outcomes[0].passed);
        assert_eq!(outcomes[0].entry, "quadratic");
        assert!(!outcomes[0].detail.is_empty());
    }

    #[test]
    fn coarse_rank_tolerance_breaks_degenerate_entries() {
        let entry = entries().into_iter().find(|e| e.name == "example-js").unwrap();
        let outcomes = run_entry(&entry, &|p| {
            p.tol.rank = 1e-2;
            p.tol.mult = 1e-2;
        });
        assert!(
            outcomes.iter().any(|o| !o.passed),
            "expected at least one failure under a 1e-2 rank tolerance"
        );
    }
}
