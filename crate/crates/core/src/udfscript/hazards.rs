//! Static detection of input values that can make a UDF fault.

use serde::{Deserialize, Serialize};

use super::ast::*;

/// Per-parameter hazards. Every parameter is null-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnHazard {
    pub column: String,
    pub dtype: Dtype,
    /// Used directly as a divisor.
    pub divisor: bool,
    /// Used directly as a `log` argument.
    pub requires_positive: bool,
    /// Used directly as a `sqrt` argument or `math.pow` base.
    pub requires_non_negative: bool,
    pub null_sensitive: bool,
    /// Appears in a `range` bound or a `while` condition.
    pub loop_bound: bool,
}

impl ColumnHazard {
    pub fn is_null_only(&self) -> bool {
        !(self.divisor || self.requires_positive || self.requires_non_negative || self.loop_bound)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardReport {
    pub columns: Vec<ColumnHazard>,
}

impl HazardReport {
    pub fn get(&self, column: &str) -> Option<&ColumnHazard> {
        self.columns.iter().find(|c| c.column == column)
    }
}

pub fn analyze_hazards(ast: &UdfAst) -> HazardReport {
    let mut columns: Vec<ColumnHazard> = ast
        .params
        .iter()
        .map(|p| ColumnHazard {
            column: p.name.clone(),
            dtype: p.dtype,
            divisor: false,
            requires_positive: false,
            requires_non_negative: false,
            null_sensitive: true,
            loop_bound: false,
        })
        .collect();
    let n_params = ast.params.len() as Slot;
    let param_of = |e: &Expr| match e.kind {
        ExprKind::Var { slot, .. } if slot < n_params => Some(slot as usize),
        _ => None,
    };

    ast.for_each_stmt(|s, _| {
        for root in s.exprs() {
            root.walk(&mut |e| match &e.kind {
                ExprKind::Binary { op: BinOp::Div | BinOp::FloorDiv | BinOp::Mod, rhs, .. } => {
                    if let Some(p) = param_of(rhs) {
                        columns[p].divisor = true;
                    }
                }
                ExprKind::Call { func: LibFunc::Divide, args } => {
                    if let Some(p) = param_of(&args[1]) {
                        columns[p].divisor = true;
                    }
                }
                ExprKind::Call { func: LibFunc::Log, args } => {
                    if let Some(p) = param_of(&args[0]) {
                        columns[p].requires_positive = true;
                    }
                }
                ExprKind::Call { func: LibFunc::Sqrt | LibFunc::Pow, args } => {
                    if let Some(p) = param_of(&args[0]) {
                        columns[p].requires_non_negative = true;
                    }
                }
                _ => {}
            });
        }
        if s.is_loop() {
            for root in s.exprs() {
                root.walk(&mut |e| {
                    if let Some(p) = param_of(e) {
                        columns[p].loop_bound = true;
                    }
                });
            }
        }
    });
    HazardReport { columns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::udfscript::parse_udf_text;

    fn report(src: &str) -> HazardReport {
        analyze_hazards(&parse_udf_text(src, &[]).unwrap())
    }

    #[test]
    fn divisor() {
        let r = report("def f(x:int): return 1/x");
        let x = r.get("x").unwrap();
        assert!(x.divisor && x.null_sensitive);
        assert!(!x.requires_positive && !x.loop_bound);
    }

    #[test]
    fn log_requires_positive() {
        let r = report("def f(y: float):\n    return math.log(y)\n");
        assert!(r.get("y").unwrap().requires_positive);
    }

    #[test]
    fn identity_is_null_sensitive_only() {
        let r = report("def f(x:int): return x");
        let x = r.get("x").unwrap();
        assert!(x.null_sensitive && x.is_null_only());
    }

    #[test]
    fn guarded_forms_are_not_flagged() {
        let r = report("def f(x: float, n: int):\n    s = 0.0\n    for i in range(n):\n        s += math.sqrt(abs(x) + 1.0) / (abs(x) + 2.0)\n    return s + np.divide(1.0, n)\n");
        let x = r.get("x").unwrap();
        assert!(x.is_null_only());
        let n = r.get("n").unwrap();
        assert!(n.loop_bound && n.divisor);
    }
}
