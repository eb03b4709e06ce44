//! The bilevel problem model: data, tolerances, the problem-file loader and
//! serializer, and evaluation helpers (values, gradients, Hessians, active
//! sets) backed by derivative expressions prepared once at load time.

use crate::expr::{self, Expr, Var};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Numerical thresholds shared by every analysis in the crate.
#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    /// Active-set width: `g_j` counts as active when `|g_j| <= act`.
    pub act: f64,
    /// Relative singular-value cutoff for every rank decision.
    pub rank: f64,
    /// Multipliers at or below this magnitude count as vanishing.
    pub mult: f64,
    /// Eigenvalues at or below this magnitude count as singular.
    pub eig: f64,
    /// Residual acceptance for linear solves and certificate checks.
    pub res: f64,
    /// Grid resolution per axis for global lower-level search.
    pub grid: usize,
    /// Extra random starts for global search polish.
    pub multistart: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            act: 1e-8,
            rank: 1e-8,
            mult: 1e-8,
            eig: 1e-8,
            res: 1e-8,
            grid: 400,
            multistart: 16,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("act", self.act),
            ("rank", self.rank),
            ("mult", self.mult),
            ("eig", self.eig),
            ("res", self.res),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Dimension(format!("tolerance `{name}` must be positive")));
            }
        }
        if self.grid < 8 {
            return Err(Error::Dimension("grid resolution must be at least 8".into()));
        }
        Ok(())
    }
}

/// Per-variable search bounds: the global lower-level search runs over the
/// `y` box, and upper-level scans run over the `x` interval.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub x: (f64, f64),
    pub y: Vec<(f64, f64)>,
}

impl SearchBox {
    pub fn contains_y(&self, y: &[f64]) -> bool {
        y.iter().zip(&self.y).all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn contains_x(&self, x: f64) -> bool {
        x >= self.x.0 && x <= self.x.1
    }
}

/// Derivative expressions of one scalar function, prepared once.
#[derive(Debug, Clone)]
struct ExprDerivs {
    val: Expr,
    dx: Expr,
    dy: Vec<Expr>,
    /// d^2 / dy_i dx
    dyx: Vec<Expr>,
    /// d^2 / dy_i dy_j
    dyy: Vec<Vec<Expr>>,
}

impl ExprDerivs {
    fn build(e: &Expr, m: usize) -> ExprDerivs {
        let dy = expr::gradient_y(e, m);
        let dyx: Vec<Expr> = dy.iter().map(|d| d.differentiate(Var::X)).collect();
        ExprDerivs {
            val: e.clone(),
            dx: e.differentiate(Var::X),
            dy,
            dyx,
            dyy: expr::hessian_yy(e, m),
        }
    }
}

/// A one-parameter bilevel program. Immutable after load; evaluation helpers
/// take `&self` only, so a problem can be shared across worker threads.
#[derive(Debug, Clone)]
pub struct BilevelProblem {
    pub m: usize,
    pub p: usize,
    pub q: usize,
    /// Upper-level objective F(x, y).
    pub upper: Expr,
    /// Upper-level constraints G_k(x, y) <= 0 (accepted by the model; most
    /// analyses require q = 0).
    pub upper_constraints: Vec<Expr>,
    /// Lower-level objective f(x, y).
    pub lower: Expr,
    /// Lower-level constraints g_j(x, y) <= 0.
    pub constraints: Vec<Expr>,
    pub bounds: Option<SearchBox>,
    pub tol: Tolerances,
    f_d: ExprDerivs,
    g_d: Vec<ExprDerivs>,
    big_f_dx: Expr,
    big_f_dy: Vec<Expr>,
}

impl BilevelProblem {
    /// Assemble a problem from parsed parts, preparing derivative bundles.
    pub fn new(
        m: usize,
        upper: Expr,
        upper_constraints: Vec<Expr>,
        lower: Expr,
        constraints: Vec<Expr>,
        bounds: Option<SearchBox>,
        tol: Tolerances,
    ) -> Result<BilevelProblem> {
        if m == 0 || m > 4 {
            return Err(Error::Dimension(format!(
                "lower-level dimension m = {m} outside the supported range 1..=4"
            )));
        }
        if constraints.len() > 12 {
            return Err(Error::Dimension(format!(
                "p = {} lower-level constraints exceed the supported maximum 12",
                constraints.len()
            )));
        }
        if upper_constraints.len() > 8 {
            return Err(Error::Dimension("more than 8 upper-level constraints".into()));
        }
        tol.validate()?;
        let mut named: Vec<(String, &Expr)> =
            vec![("F".to_string(), &upper), ("f".to_string(), &lower)];
        for (j, e) in constraints.iter().enumerate() {
            named.push((format!("g{}", j + 1), e));
        }
        for (k, e) in upper_constraints.iter().enumerate() {
            named.push((format!("G{}", k + 1), e));
        }
        for (name, e) in named {
            let used = e.max_y_dimension();
            if used > m {
                return Err(Error::Dimension(format!(
                    "expression for {name} uses y{used} but m = {m}"
                )));
            }
        }
        if let Some(b) = &bounds {
            if b.y.len() != m {
                return Err(Error::Dimension(format!(
                    "search box declares {} y-intervals but m = {m}",
                    b.y.len()
                )));
            }
            for &(lo, hi) in std::iter::once(&b.x).chain(b.y.iter()) {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(Error::Dimension(
                        "search box intervals must be finite with lo < hi".into(),
                    ));
                }
            }
        }
        let f_d = ExprDerivs::build(&lower, m);
        let g_d = constraints.iter().map(|g| ExprDerivs::build(g, m)).collect();
        let big_f_dx = upper.differentiate(Var::X);
        let big_f_dy = expr::gradient_y(&upper, m);
        Ok(BilevelProblem {
            m,
            p: constraints.len(),
            q: upper_constraints.len(),
            upper,
            upper_constraints,
            lower,
            constraints,
            bounds,
            tol,
            f_d,
            g_d,
            big_f_dx,
            big_f_dy,
        })
    }

    fn check_y(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.m {
            return Err(Error::Dimension(format!(
                "point has {} y-coordinates but m = {}",
                y.len(),
                self.m
            )));
        }
        Ok(())
    }

    // -- scalar values ------------------------------------------------------

    pub fn f_val(&self, x: f64, y: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        Ok(self.f_d.val.eval(x, y)?)
    }

    pub fn g_val(&self, j: usize, x: f64, y: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        Ok(self.g_d[j].val.eval(x, y)?)
    }

    pub fn g_all(&self, x: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.check_y(y)?;
        self.g_d.iter().map(|d| d.val.eval(x, y).map_err(Error::from)).collect()
    }

    pub fn upper_val(&self, x: f64, y: &[f64]) -> Result<f64> {
        self.check_y(y)?;
        Ok(self.upper.eval(x, y)?)
    }

    // -- first derivatives --------------------------------------------------

    pub fn grad_y_f(&self, x: f64, y: &[f64]) -> Result<DVector<f64>> {
        self.check_y(y)?;
        eval_vec(&self.f_d.dy, x, y)
    }

    pub fn grad_x_f(&self, x: f64, y: &[f64]) -> Result<f64> {
        Ok(self.f_d.dx.eval(x, y)?)
    }

    pub fn grad_y_g(&self, j: usize, x: f64, y: &[f64]) -> Result<DVector<f64>> {
        self.check_y(y)?;
        eval_vec(&self.g_d[j].dy, x, y)
    }

    pub fn grad_x_g(&self, j: usize, x: f64, y: &[f64]) -> Result<f64> {
        Ok(self.g_d[j].dx.eval(x, y)?)
    }

    /// Columns are the y-gradients of the selected constraints: `m x |js|`.
    pub fn grad_y_g_cols(&self, js: &[usize], x: f64, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_y(y)?;
        let mut a = DMatrix::zeros(self.m, js.len());
        for (c, &j) in js.iter().enumerate() {
            for i in 0..self.m {
                a[(i, c)] = self.g_d[j].dy[i].eval(x, y)?;
            }
        }
        Ok(a)
    }

    /// Full gradient of `g_j` in `(x, y)`, length `1 + m`.
    pub fn full_grad_g(&self, j: usize, x: f64, y: &[f64]) -> Result<DVector<f64>> {
        self.check_y(y)?;
        let mut v = DVector::zeros(1 + self.m);
        v[0] = self.g_d[j].dx.eval(x, y)?;
        for i in 0..self.m {
            v[1 + i] = self.g_d[j].dy[i].eval(x, y)?;
        }
        Ok(v)
    }

    pub fn grad_x_upper(&self, x: f64, y: &[f64]) -> Result<f64> {
        Ok(self.big_f_dx.eval(x, y)?)
    }

    pub fn grad_y_upper(&self, x: f64, y: &[f64]) -> Result<DVector<f64>> {
        self.check_y(y)?;
        eval_vec(&self.big_f_dy, x, y)
    }

    // -- second derivatives -------------------------------------------------

    pub fn hess_yy_f(&self, x: f64, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_y(y)?;
        eval_mat(&self.f_d.dyy, x, y)
    }

    pub fn hess_yx_f(&self, x: f64, y: &[f64]) -> Result<DVector<f64>> {
        self.check_y(y)?;
        eval_vec(&self.f_d.dyx, x, y)
    }

    pub fn hess_yy_g(&self, j: usize, x: f64, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_y(y)?;
        eval_mat(&self.g_d[j].dyy, x, y)
    }

    pub fn hess_yx_g(&self, j: usize, x: f64, y: &[f64]) -> Result<DVector<f64>> {
        self.check_y(y)?;
        eval_vec(&self.g_d[j].dyx, x, y)
    }

    /// Whether every y-Hessian entry of `g_j` is the literal zero constant,
    /// certifying that the constraint is affine in `y`.
    pub fn g_affine_in_y(&self, j: usize) -> bool {
        self.g_d[j].dyy.iter().flatten().all(|e| matches!(e, Expr::Const(c) if *c == 0.0))
    }

    /// `u0 * hess_yy(f) + sum_j u_j * hess_yy(g_j)` over the given pairs.
    pub fn hess_yy_lagrangian(
        &self,
        x: f64,
        y: &[f64],
        u0: f64,
        terms: &[(usize, f64)],
    ) -> Result<DMatrix<f64>> {
        let mut h = if u0 != 0.0 {
            self.hess_yy_f(x, y)? * u0
        } else {
            DMatrix::zeros(self.m, self.m)
        };
        for &(j, uj) in terms {
            if uj != 0.0 {
                h += self.hess_yy_g(j, x, y)? * uj;
            }
        }
        Ok(h)
    }

    /// `u0 * hess_yx(f) + sum_j u_j * hess_yx(g_j)`.
    pub fn hess_yx_lagrangian(
        &self,
        x: f64,
        y: &[f64],
        u0: f64,
        terms: &[(usize, f64)],
    ) -> Result<DVector<f64>> {
        let mut h = if u0 != 0.0 {
            self.hess_yx_f(x, y)? * u0
        } else {
            DVector::zeros(self.m)
        };
        for &(j, uj) in terms {
            if uj != 0.0 {
                h += self.hess_yx_g(j, x, y)? * uj;
            }
        }
        Ok(h)
    }

    // -- feasibility --------------------------------------------------------

    /// Indices of active lower-level constraints, `{ j : |g_j| <= act }`.
    /// A constraint value beyond `act` on the positive side is an error.
    pub fn active_set(&self, x: f64, y: &[f64]) -> Result<Vec<usize>> {
        let g = self.g_all(x, y)?;
        let mut j0 = Vec::new();
        for (j, &v) in g.iter().enumerate() {
            if v > self.tol.act {
                return Err(Error::Infeasible(format!(
                    "g{} = {v:.6e} exceeds the active tolerance at the queried point",
                    j + 1
                )));
            }
            if v >= -self.tol.act {
                j0.push(j);
            }
        }
        Ok(j0)
    }

    pub fn lower_feasible(&self, x: f64, y: &[f64]) -> Result<bool> {
        Ok(self.g_all(x, y)?.iter().all(|&v| v <= self.tol.act))
    }

    pub fn upper_feasible(&self, x: f64, y: &[f64]) -> Result<bool> {
        self.check_y(y)?;
        for e in &self.upper_constraints {
            if e.eval(x, y)? > self.tol.act {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn bounds_required(&self) -> Result<&SearchBox> {
        self.bounds.as_ref().ok_or(Error::MissingBox)
    }

    // -- serialization ------------------------------------------------------

    /// Write the problem back in the file format accepted by `load_problem`.
    /// Expressions are printed canonically; a reload yields the same model.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        s.push_str("[problem]\n");
        s.push_str("n = 1\n");
        s.push_str(&format!("m = {}\n", self.m));
        s.push_str(&format!("p = {}\n", self.p));
        s.push_str(&format!("q = {}\n\n", self.q));
        s.push_str("[upper]\n");
        s.push_str(&format!("F = \"{}\"\n", self.upper));
        for (k, e) in self.upper_constraints.iter().enumerate() {
            s.push_str(&format!("G{} = \"{}\"\n", k + 1, e));
        }
        s.push_str("\n[lower]\n");
        s.push_str(&format!("f = \"{}\"\n", self.lower));
        for (j, e) in self.constraints.iter().enumerate() {
            s.push_str(&format!("g{} = \"{}\"\n", j + 1, e));
        }
        if let Some(b) = &self.bounds {
            s.push_str("\n[box]\n");
            s.push_str(&format!("x = {}, {}\n", b.x.0, b.x.1));
            for (i, (lo, hi)) in b.y.iter().enumerate() {
                s.push_str(&format!("y{} = {}, {}\n", i + 1, lo, hi));
            }
        }
        s.push_str("\n[tolerances]\n");
        s.push_str(&format!("act = {}\n", self.tol.act));
        s.push_str(&format!("rank = {}\n", self.tol.rank));
        s.push_str(&format!("mult = {}\n", self.tol.mult));
        s.push_str(&format!("eig = {}\n", self.tol.eig));
        s.push_str(&format!("res = {}\n", self.tol.res));
        s.push_str(&format!("grid = {}\n", self.tol.grid));
        s.push_str(&format!("multistart = {}\n", self.tol.multistart));
        s
    }
}

fn eval_vec(exprs: &[Expr], x: f64, y: &[f64]) -> Result<DVector<f64>> {
    let mut v = DVector::zeros(exprs.len());
    for (i, e) in exprs.iter().enumerate() {
        v[i] = e.eval(x, y)?;
    }
    Ok(v)
}

fn eval_mat(exprs: &[Vec<Expr>], x: f64, y: &[f64]) -> Result<DMatrix<f64>> {
    let n = exprs.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = exprs[i][j].eval(x, y)?;
        }
    }
    Ok(a)
}

// ---------------------------------------------------------------------------
// Problem-file loader
// ---------------------------------------------------------------------------

/// Parse the sectioned problem-file format (see `docs/format.md`).
pub fn load_problem(text: &str) -> Result<BilevelProblem> {
    let mut sections: Vec<(String, Vec<(usize, String, String)>)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| Error::Format {
                line: line_no,
                message: "unterminated section header".into(),
            })?;
            sections.push((name.trim().to_ascii_lowercase(), Vec::new()));
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
            line: line_no,
            message: "expected `key = value`".into(),
        })?;
        let Some((_, entries)) = sections.last_mut() else {
            return Err(Error::Format {
                line: line_no,
                message: "entry before any [section] header".into(),
            });
        };
        entries.push((line_no, key.trim().to_string(), value.trim().to_string()));
    }

    let find = |name: &str| sections.iter().find(|(n, _)| n == name).map(|(_, e)| e);
    let problem = find("problem").ok_or_else(|| Error::Format {
        line: 0,
        message: "missing [problem] section".into(),
    })?;

    let mut n = None;
    let mut m = None;
    let mut p = None;
    let mut q = None;
    for (line, key, value) in problem {
        let v: usize = value.parse().map_err(|_| Error::Format {
            line: *line,
            message: format!("`{key}` must be a non-negative integer"),
        })?;
        match key.as_str() {
            "n" => n = Some(v),
            "m" => m = Some(v),
            "p" => p = Some(v),
            "q" => q = Some(v),
            other => {
                return Err(Error::Format {
                    line: *line,
                    message: format!("unknown key `{other}` in [problem]"),
                })
            }
        }
    }
    let n = n.ok_or_else(|| missing("n", "[problem]"))?;
    let m = m.ok_or_else(|| missing("m", "[problem]"))?;
    let p = p.ok_or_else(|| missing("p", "[problem]"))?;
    let q = q.unwrap_or(0);
    if n != 1 {
        return Err(Error::Format {
            line: 0,
            message: format!("n = {n} is not supported; the upper-level variable is scalar"),
        });
    }

    let upper_sec = find("upper").ok_or_else(|| Error::Format {
        line: 0,
        message: "missing [upper] section".into(),
    })?;
    let lower_sec = find("lower").ok_or_else(|| Error::Format {
        line: 0,
        message: "missing [lower] section".into(),
    })?;

    let mut big_f = None;
    let mut big_g: Vec<Option<Expr>> = vec![None; q];
    for (line, key, value) in upper_sec {
        if key == "F" {
            big_f = Some(parse_quoted_expr(*line, "F", value)?);
        } else if let Some(k) = indexed_key(key, 'G') {
            if k == 0 || k > q {
                return Err(Error::Format {
                    line: *line,
                    message: format!("constraint index `{key}` outside 1..={q}"),
                });
            }
            big_g[k - 1] = Some(parse_quoted_expr(*line, key, value)?);
        } else {
            return Err(Error::Format {
                line: *line,
                message: format!("unknown key `{key}` in [upper]"),
            });
        }
    }
    let mut f = None;
    let mut g: Vec<Option<Expr>> = vec![None; p];
    for (line, key, value) in lower_sec {
        if key == "f" {
            f = Some(parse_quoted_expr(*line, "f", value)?);
        } else if let Some(k) = indexed_key(key, 'g') {
            if k == 0 || k > p {
                return Err(Error::Format {
                    line: *line,
                    message: format!("constraint index `{key}` outside 1..={p}"),
                });
            }
            g[k - 1] = Some(parse_quoted_expr(*line, key, value)?);
        } else {
            return Err(Error::Format {
                line: *line,
                message: format!("unknown key `{key}` in [lower]"),
            });
        }
    }
    let big_f = big_f.ok_or_else(|| missing("F", "[upper]"))?;
    let f = f.ok_or_else(|| missing("f", "[lower]"))?;
    let big_g: Vec<Expr> = big_g
        .into_iter()
        .enumerate()
        .map(|(k, e)| e.ok_or_else(|| missing(&format!("G{}", k + 1), "[upper]")))
        .collect::<Result<_>>()?;
    let g: Vec<Expr> = g
        .into_iter()
        .enumerate()
        .map(|(j, e)| e.ok_or_else(|| missing(&format!("g{}", j + 1), "[lower]")))
        .collect::<Result<_>>()?;

    let bounds = match find("box") {
        None => None,
        Some(entries) => {
            let mut x = None;
            let mut ys: Vec<Option<(f64, f64)>> = vec![None; m];
            for (line, key, value) in entries {
                let interval = parse_interval(*line, value)?;
                if key == "x" {
                    x = Some(interval);
                } else if let Some(k) = indexed_key(key, 'y') {
                    if k == 0 || k > m {
                        return Err(Error::Format {
                            line: *line,
                            message: format!("box variable `{key}` outside y1..y{m}"),
                        });
                    }
                    ys[k - 1] = Some(interval);
                } else {
                    return Err(Error::Format {
                        line: *line,
                        message: format!("unknown key `{key}` in [box]"),
                    });
                }
            }
            let x = x.ok_or_else(|| missing("x", "[box]"))?;
            let y = ys
                .into_iter()
                .enumerate()
                .map(|(i, v)| v.ok_or_else(|| missing(&format!("y{}", i + 1), "[box]")))
                .collect::<Result<Vec<_>>>()?;
            Some(SearchBox { x, y })
        }
    };

    let mut tol = Tolerances::default();
    if let Some(entries) = find("tolerances") {
        for (line, key, value) in entries {
            let bad = |what: &str| Error::Format { line: *line, message: what.to_string() };
            match key.as_str() {
                "act" => tol.act = parse_f64(*line, value)?,
                "rank" => tol.rank = parse_f64(*line, value)?,
                "mult" => tol.mult = parse_f64(*line, value)?,
                "eig" => tol.eig = parse_f64(*line, value)?,
                "res" => tol.res = parse_f64(*line, value)?,
                "grid" => {
                    tol.grid = value.parse().map_err(|_| bad("`grid` must be an integer"))?
                }
                "multistart" => {
                    tol.multistart =
                        value.parse().map_err(|_| bad("`multistart` must be an integer"))?
                }
                other => {
                    return Err(Error::Format {
                        line: *line,
                        message: format!("unknown key `{other}` in [tolerances]"),
                    })
                }
            }
        }
    }

    BilevelProblem::new(m, big_f, big_g, f, g, bounds, tol)
}

fn missing(key: &str, section: &str) -> Error {
    Error::Format { line: 0, message: format!("missing `{key}` in {section}") }
}

fn indexed_key(key: &str, prefix: char) -> Option<usize> {
    let rest = key.strip_prefix(prefix)?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

fn parse_quoted_expr(line: usize, field: &str, value: &str) -> Result<Expr> {
    let inner = value
        .strip_prefix('"')
        .and_then(|v| v.strip_suffix('"'))
        .ok_or_else(|| Error::Format {
            line,
            message: format!("expression for `{field}` must be double-quoted"),
        })?;
    expr::parse_expr(inner).map_err(|source| Error::ExprSyntax { field: field.to_string(), source })
}

fn parse_interval(line: usize, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(Error::Format { line, message: "interval must be `lo, hi`".into() });
    }
    Ok((parse_f64(line, parts[0])?, parse_f64(line, parts[1])?))
}

fn parse_f64(line: usize, value: &str) -> Result<f64> {
    value.trim().parse().map_err(|_| Error::Format {
        line,
        message: format!("`{value}` is not a number"),
    })
}
