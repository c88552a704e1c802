//! Writer for the fixed LP text format.
//!
//! This is the interchange path for out-of-process backends and for
//! inspecting models by hand.  The emitted document has the layout:
//!
//! ```text
//! \ <comment line naming the model size>
//! Minimize
//!  obj: <coeff> <var> [+|- <coeff> <var> ...]
//! Subject To
//!  <row name>: <terms> <=|>=|= <rhs>
//! Bounds
//!  <lower> <= <var> <= <upper>      (omitted when 0 <= v < +inf, the default)
//!  <var> free                       (for doubly unbounded variables)
//! Generals
//!  <integer var names>
//! End
//! ```
//!
//! Field rules: variable and row names are written verbatim (builders only
//! produce `[A-Za-z0-9_]` names); coefficients use shortest round-trip
//! formatting; a variable with zero objective coefficient is omitted from the
//! objective line; `+inf`/`-inf` bounds are written as `inf`/`-inf`.

use super::{LinearModel, RowSense};
use std::io::{self, Write};

pub fn write_lp(model: &LinearModel, w: &mut impl Write) -> io::Result<()> {
    writeln!(
        w,
        "\\ {} variables, {} rows",
        model.n_vars(),
        model.n_rows()
    )?;
    writeln!(w, "Minimize")?;
    write!(w, " obj:")?;
    let mut first = true;
    for v in &model.vars {
        if v.obj == 0.0 {
            continue;
        }
        write_term(w, &mut first, v.obj, &v.name)?;
    }
    if first {
        write!(w, " 0 {}", model.vars.first().map_or("x0", |v| v.name.as_str()))?;
    }
    writeln!(w)?;

    writeln!(w, "Subject To")?;
    for row in &model.rows {
        write!(w, " {}:", row.name)?;
        let mut first = true;
        for &(v, a) in &row.terms {
            if a == 0.0 {
                continue;
            }
            write_term(w, &mut first, a, &model.vars[v.0].name)?;
        }
        if first {
            write!(w, " 0 {}", model.vars.first().map_or("x0", |v| v.name.as_str()))?;
        }
        let op = match row.sense {
            RowSense::Le => "<=",
            RowSense::Ge => ">=",
            RowSense::Eq => "=",
        };
        writeln!(w, " {} {}", op, fmt_num(row.rhs))?;
    }

    writeln!(w, "Bounds")?;
    for v in &model.vars {
        if v.lower == 0.0 && v.upper == f64::INFINITY {
            continue; // the LP-format default
        }
        if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            writeln!(w, " {} free", v.name)?;
        } else {
            writeln!(w, " {} <= {} <= {}", fmt_num(v.lower), v.name, fmt_num(v.upper))?;
        }
    }

    if model.has_integers() {
        writeln!(w, "Generals")?;
        for v in &model.vars {
            if v.integer {
                writeln!(w, " {}", v.name)?;
            }
        }
    }
    writeln!(w, "End")
}

fn write_term(w: &mut impl Write, first: &mut bool, coeff: f64, name: &str) -> io::Result<()> {
    if *first {
        *first = false;
        if coeff < 0.0 {
            write!(w, " -")?;
        } else {
            write!(w, " ")?;
        }
    } else if coeff < 0.0 {
        write!(w, " - ")?;
    } else {
        write!(w, " + ")?;
    }
    let mag = coeff.abs();
    if mag == 1.0 {
        write!(w, "{name}")
    } else {
        write!(w, "{} {name}", fmt_num(mag))
    }
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v}")
    }
}

#[cfg(test)]
mod tests {
    use super::super::{LinearModel, RowSense};

    #[test]
    fn toy_model_renders_the_documented_layout() {
        let mut m = LinearModel::new();
        let y = m.add_var("y", 100.0, 0.0, f64::INFINITY, true);
        let x = m.add_var("x", 1.0, 0.0, f64::INFINITY, false);
        m.add_row("demand", RowSense::Ge, 5.0, vec![(x, 1.0)]);
        m.add_row("capacity", RowSense::Le, 0.0, vec![(x, 1.0), (y, -10.0)]);
        let mut buf = Vec::new();
        m.write_lp(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let want = "\\ 2 variables, 2 rows\n\
                    Minimize\n \
                    obj: 100 y + x\n\
                    Subject To\n \
                    demand: x >= 5\n \
                    capacity: x - 10 y <= 0\n\
                    Bounds\n\
                    Generals\n y\n\
                    End\n";
        assert_eq!(text, want);
    }

    #[test]
    fn bounds_and_free_variables_render() {
        let mut m = LinearModel::new();
        m.add_var("a", 1.0, -1.5, 2.5, false);
        m.add_var("b", 0.0, f64::NEG_INFINITY, f64::INFINITY, false);
        let mut buf = Vec::new();
        m.write_lp(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(" -1.5 <= a <= 2.5\n"));
        assert!(text.contains(" b free\n"));
    }
}
