use super::*;

fn parse(text: &str) -> Descriptor {
    Descriptor::parse(text).unwrap()
}

fn eval_str(expr: &str, own: &Descriptor, other: &Descriptor) -> Value {
    evaluate(&parse_expression(expr).unwrap(), own, other).unwrap()
}

fn eval_closed(expr: &str) -> Value {
    let empty = Descriptor::new();
    eval_str(expr, &empty, &empty)
}

#[test]
fn parses_single_literal_attribute() {
    let d = parse("Executable = \"sim.sh\";");
    assert_eq!(d.len(), 1);
    assert_eq!(d.get("Executable"), Some(&Expr::str("sim.sh")));
    // names fold case
    assert_eq!(d.get("executable"), Some(&Expr::str("sim.sh")));
}

#[test]
fn parses_member_call_tree() {
    let d = parse("Requirements = member(other.CloseSE, \"CERN::MSS\");");
    assert_eq!(d.len(), 1);
    assert_eq!(
        d.requirements(),
        Some(&Expr::member(Expr::other("CloseSE"), Expr::str("CERN::MSS")))
    );
}

#[test]
fn duplicate_attribute_is_an_error() {
    let err = Descriptor::parse("X = 1; X = 2;").unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::DuplicateAttribute("X".to_string()));
    // case-folded duplicates too
    let err = Descriptor::parse("Site = 1; SITE = 2;").unwrap_err();
    assert!(matches!(err.kind, ParseErrorKind::DuplicateAttribute(_)));
}

#[test]
fn syntax_errors_carry_position() {
    let err = Descriptor::parse("A = 1;\nB = ;").unwrap_err();
    assert_eq!(err.line, 2);
    assert_eq!(err.col, 5);

    let err = Descriptor::parse("A = \"oops").unwrap_err();
    assert_eq!(err.kind, ParseErrorKind::UnterminatedString);
}

#[test]
fn comments_and_whitespace_are_skipped() {
    let d = parse("# a job\nExecutable = \"x\"; # trailing\n\nPriority = 3;");
    assert_eq!(d.len(), 2);
    assert_eq!(d.get_int("Priority"), Some(3));
}

#[test]
fn reserved_words_rejected_as_attribute_names() {
    assert!(matches!(
        Descriptor::parse("other = 1;").unwrap_err().kind,
        ParseErrorKind::ReservedWord(_)
    ));
    assert!(matches!(
        Descriptor::parse("member = 1;").unwrap_err().kind,
        ParseErrorKind::ReservedWord(_)
    ));
}

#[test]
fn chained_comparison_is_rejected() {
    assert!(Descriptor::parse("A = 1 < 2 < 3;").unwrap_err().line == 1);
}

#[test]
fn scoped_reference_beyond_other_is_rejected() {
    assert!(Descriptor::parse("A = foo.bar;").is_err());
}

#[test]
fn arithmetic_basics() {
    assert_eq!(eval_closed("1 + 2"), Value::Int(3));
    assert_eq!(eval_closed("7 / 2"), Value::Int(3));
    assert_eq!(eval_closed("7.0 / 2"), Value::Real(3.5));
    assert_eq!(eval_closed("2 * 3 + 4"), Value::Int(10));
    assert_eq!(eval_closed("2 + 3 * 4"), Value::Int(14));
    assert_eq!(eval_closed("-(2 + 3)"), Value::Int(-5));
}

#[test]
fn division_by_zero_and_overflow_are_undefined() {
    assert_eq!(eval_closed("1 / 0"), Value::Undefined);
    assert_eq!(eval_closed("1.0 / 0.0"), Value::Undefined);
    assert_eq!(
        eval_closed("9223372036854775807 + 1"),
        Value::Undefined
    );
}

#[test]
fn member_by_definition() {
    assert_eq!(eval_closed("member([\"A\",\"B\"], \"C\")"), Value::Bool(false));
    assert_eq!(eval_closed("member([\"A\",\"B\"], \"B\")"), Value::Bool(true));
    assert_eq!(eval_closed("member([1, 2.0], 2)"), Value::Bool(true));
    // non-list subject and undefined needle are undefined
    assert_eq!(eval_closed("member(\"AB\", \"A\")"), Value::Undefined);
    let empty = Descriptor::new();
    assert_eq!(
        eval_str("member([\"A\"], other.X)", &empty, &empty),
        Value::Undefined
    );
}

#[test]
fn missing_other_attribute_is_undefined() {
    let task = parse("Requirements = other.FreeSpace > 500;");
    let bare = Descriptor::new();
    assert_eq!(
        eval_str("other.FreeSpace > 500", &task, &bare),
        Value::Undefined
    );
}

#[test]
fn incompatible_comparisons_are_undefined() {
    assert_eq!(eval_closed("1 == \"1\""), Value::Undefined);
    assert_eq!(eval_closed("true < false"), Value::Undefined);
    assert_eq!(eval_closed("[1] > [2]"), Value::Undefined);
    assert_eq!(eval_closed("\"a\" < \"b\""), Value::Bool(true));
    assert_eq!(eval_closed("1 == 1.0"), Value::Bool(true));
}

/// The full 9-case truth tables for three-valued && and ||.
#[test]
fn three_valued_logic_tables_hold_exactly() {
    // T/F/U operands come from a descriptor: U is a reference to a
    // missing attribute.
    let env = parse("T = true; F = false;");
    let empty = Descriptor::new();
    let term = |name: &str| match name {
        "T" => "T",
        "F" => "F",
        _ => "U",
    };
    let value = |name: &str| match name {
        "T" => Value::Bool(true),
        "F" => Value::Bool(false),
        _ => Value::Undefined,
    };

    let and_expect = |a: &str, b: &str| match (value(a), value(b)) {
        (Value::Bool(false), _) | (_, Value::Bool(false)) => Value::Bool(false),
        (Value::Bool(true), Value::Bool(true)) => Value::Bool(true),
        _ => Value::Undefined,
    };
    let or_expect = |a: &str, b: &str| match (value(a), value(b)) {
        (Value::Bool(true), _) | (_, Value::Bool(true)) => Value::Bool(true),
        (Value::Bool(false), Value::Bool(false)) => Value::Bool(false),
        _ => Value::Undefined,
    };

    for a in ["T", "F", "U"] {
        for b in ["T", "F", "U"] {
            let and_src = format!("{} && {}", term(a), term(b));
            let or_src = format!("{} || {}", term(a), term(b));
            assert_eq!(eval_str(&and_src, &env, &empty), and_expect(a, b), "{and_src}");
            assert_eq!(eval_str(&or_src, &env, &empty), or_expect(a, b), "{or_src}");
        }
    }

    // spot checks straight from the contract
    assert_eq!(eval_str("U && false", &env, &empty), Value::Bool(false));
    assert_eq!(eval_str("U || true", &env, &empty), Value::Bool(true));
}

#[test]
fn not_follows_three_valued_logic() {
    let env = parse("T = true;");
    let empty = Descriptor::new();
    assert_eq!(eval_str("!T", &env, &empty), Value::Bool(false));
    assert_eq!(eval_str("!U", &env, &empty), Value::Undefined);
    assert_eq!(eval_closed("!3"), Value::Undefined);
}

#[test]
fn self_reference_cycle_hits_depth_limit() {
    let d = parse("X = X + 1;");
    let empty = Descriptor::new();
    let err = evaluate(d.get("X").unwrap(), &d, &empty).unwrap_err();
    assert!(matches!(err, EvalError::DepthLimit(_)));
}

#[test]
fn mutual_cycle_across_descriptors_hits_depth_limit() {
    let a = parse("Requirements = other.Ping;");
    let b = parse("Ping = other.Requirements;");
    let err = evaluate(a.requirements().unwrap(), &a, &b).unwrap_err();
    assert!(matches!(err, EvalError::DepthLimit(_)));
    // and the matcher treats it as a non-match rather than failing
    assert!(!symmetric_match(&a, &b));
}

#[test]
fn deep_but_finite_chains_resolve() {
    let mut src = String::from("A0 = 1;\n");
    for i in 1..30 {
        src.push_str(&format!("A{i} = A{} + 1;\n", i - 1));
    }
    let d = parse(&src);
    let empty = Descriptor::new();
    assert_eq!(
        evaluate(d.get("A29").unwrap(), &d, &empty).unwrap(),
        Value::Int(30)
    );
}

#[test]
fn vacuous_requirements_match() {
    let a = parse("Name = \"x\";");
    let b = parse("Name = \"y\";");
    assert!(symmetric_match(&a, &b));
    let detail = match_detail(&a, &b);
    assert_eq!(detail.forward, MatchSide::Vacuous);
    assert_eq!(detail.backward, MatchSide::Vacuous);
}

// Expected value computed by hand with the reference semantics:
// task side: member(b.CloseSE, "S1") over ["S1","S2"] -> true;
// resource side: a.Priority = 100 >= 0 -> true; both true -> match.
#[test]
fn two_sided_match_example() {
    let task = parse("Priority = 100; Requirements = member(other.CloseSE, \"S1\");");
    let ce = parse("CloseSE = [\"S1\", \"S2\"]; Requirements = other.Priority >= 0;");
    assert!(symmetric_match(&task, &ce));
    assert!(symmetric_match(&ce, &task));
}

#[test]
fn string_inequality_blocks_match() {
    let task = parse("Requirements = other.Site == \"A\";");
    let ce = parse("Site = \"B\";");
    assert!(!symmetric_match(&task, &ce));
    assert_eq!(match_detail(&task, &ce).forward, MatchSide::False);
}

#[test]
fn undefined_requirements_count_as_non_match() {
    let task = parse("Requirements = other.NoSuch > 1;");
    let ce = parse("Site = \"B\";");
    assert!(!symmetric_match(&task, &ce));
    assert_eq!(match_detail(&task, &ce).forward, MatchSide::Undefined);
    // non-boolean requirements as well
    let odd = parse("Requirements = 42;");
    assert!(!symmetric_match(&odd, &ce));
}

#[test]
fn string_comparison_is_case_sensitive() {
    let a = parse("Requirements = other.Site == \"cern\";");
    let b = parse("Site = \"CERN\";");
    assert!(!symmetric_match(&a, &b));
}

#[test]
fn serialize_canonical_forms() {
    let mut d = Descriptor::new();
    d.set("A", Expr::Int(1));
    assert_eq!(d.to_text(), "A = 1;\n");

    let mut d = Descriptor::new();
    d.set("L", Expr::str_list(["x"]));
    assert_eq!(d.to_text(), "L = [\"x\"];\n");
}

#[test]
fn serialize_preserves_entry_order_and_name_case() {
    let d = parse("Zeta = 1; alpha = 2; MiXeD = 3;");
    assert_eq!(d.to_text(), "Zeta = 1;\nalpha = 2;\nMiXeD = 3;\n");
}

#[test]
fn round_trip_examples() {
    for src in [
        "A = 1;",
        "A = -1;",
        "R = 1.5; S = 2e-3;",
        "S = \"tab\\t nl\\n quote\\\" back\\\\\";",
        "E = (1 + 2) * 3; F = 1 + 2 * 3;",
        "N = [[1, 2], [\"a\"], []];",
        "Q = !(other.X == 3) && member(CloseSE, \"S\") || A < -2;",
        "C = 1 < 2; D = (1 < 2) == true;",
    ] {
        let d = parse(src);
        let text = d.to_text();
        let d2 = parse(&text);
        assert_eq!(d, d2, "round-trip of {src:?} via {text:?}");
    }
}

#[test]
fn evaluation_of_other_side_uses_its_own_scope() {
    // b.Limit refers to b.Base when evaluated through other.Limit from a.
    let a = parse("Requirements = other.Limit == 10;");
    let b = parse("Base = 5; Limit = Base * 2;");
    assert!(match_detail(&a, &b).forward.satisfied());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(256))]

    #[test]
    fn symmetric_match_is_symmetric(
        a in strategies::descriptor(),
        b in strategies::descriptor(),
    ) {
        proptest::prop_assert_eq!(symmetric_match(&a, &b), symmetric_match(&b, &a));
    }

    #[test]
    fn parse_serialize_is_identity(d in strategies::descriptor()) {
        let text = d.to_text();
        let parsed = Descriptor::parse(&text).unwrap();
        proptest::prop_assert_eq!(&parsed, &d, "text: {}", text);
        // the single-line form parses to the same structure too
        let line = Descriptor::parse(&d.to_line()).unwrap();
        proptest::prop_assert_eq!(&line, &d);
    }

    #[test]
    fn evaluation_is_total(
        e in strategies::expr(),
        own in strategies::descriptor(),
        other in strategies::descriptor(),
    ) {
        // A Value or a depth-limit error; nothing panics.
        let _ = evaluate(&e, &own, &other);
    }
}

pub mod strategies {
    //! proptest generators for fuzzed descriptors and expressions.

    use proptest::prelude::*;

    use super::{BinOp, Descriptor, Expr};

    const ATTRS: &[&str] = &[
        "Requirements",
        "CloseSE",
        "Site",
        "Priority",
        "FreeSpace",
        "Packages",
        "Size",
        "CacheFree",
    ];

    pub fn expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            any::<bool>().prop_map(Expr::Bool),
            (-1000i64..1000).prop_map(Expr::Int),
            (-1000i64..1000).prop_map(|n| Expr::Real(n as f64 / 8.0)),
            "[A-Za-z:/_0-9]{0,8}".prop_map(Expr::Str),
            proptest::sample::select(ATTRS).prop_map(Expr::attr),
            proptest::sample::select(ATTRS).prop_map(Expr::other),
        ];
        leaf.prop_recursive(4, 48, 4, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone(), bin_op())
                    .prop_map(|(l, r, op)| Expr::binary(op, l, r)),
                inner.clone().prop_map(|e| Expr::Not(Box::new(e))),
                inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                (inner.clone(), inner.clone()).prop_map(|(l, v)| Expr::member(l, v)),
                proptest::collection::vec(inner, 0..4).prop_map(Expr::List),
            ]
        })
    }

    fn bin_op() -> impl Strategy<Value = BinOp> {
        proptest::sample::select(vec![
            BinOp::Or,
            BinOp::And,
            BinOp::Eq,
            BinOp::Ne,
            BinOp::Lt,
            BinOp::Le,
            BinOp::Gt,
            BinOp::Ge,
            BinOp::Add,
            BinOp::Sub,
            BinOp::Mul,
            BinOp::Div,
        ])
    }

    pub fn descriptor() -> impl Strategy<Value = Descriptor> {
        proptest::collection::vec(
            (proptest::sample::select(ATTRS), expr()),
            0..5,
        )
        .prop_map(|pairs| {
            let mut d = Descriptor::new();
            for (name, e) in pairs {
                d.set(name, e);
            }
            d
        })
    }
}
