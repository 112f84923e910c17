mod common;

use std::cmp::Ordering;
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use dbtree::kvserver::{net, KvServer};
use dbtree::sql::{decode_key, encode_key, ColumnType, QueryResult, Session, SqlError, Value};
use dbtree::txn::Client;
use dbtree::wire::sched::{explore, Policy, Scheduler};
use dbtree::wire::tcp::TcpTransport;
use dbtree::wire::ServerId;
use proptest::prelude::*;

fn native_cmp(a: &Value, b: &Value) -> Ordering {
    match (a, b) {
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        (Value::Float(x), Value::Float(y)) => x.partial_cmp(y).unwrap(),
        _ => unreachable!(),
    }
}

fn float_strategy() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("NaN is rejected before encoding", |x| !x.is_nan()),
        prop::sample::select(vec![0.0, -0.0, f64::MIN_POSITIVE, -f64::MIN_POSITIVE, 5e-324, -5e-324, f64::MAX, f64::MIN, f64::INFINITY, f64::NEG_INFINITY]),
        (-4i32..4).prop_map(|i| i as f64 * 0.5),
    ]
}

fn text_strategy() -> impl Strategy<Value = String> {
    prop_oneof![".{0,6}", "[a\u{0}\u{1}b]{0,6}"]
}

fn check_pair(a: Value, b: Value, ty: ColumnType) -> Result<(), TestCaseError> {
    let (ea, eb) = (encode_key(&a).unwrap(), encode_key(&b).unwrap());
    prop_assert_eq!(native_cmp(&a, &b), ea.cmp(&eb), "{:?} vs {:?}", a, b);
    for (v, e) in [(&a, &ea), (&b, &eb)] {
        let back = decode_key(e, ty).unwrap();
        match (v, &back) {
            (Value::Float(x), Value::Float(y)) if *x == 0.0 => prop_assert!(*y == 0.0 && y.is_sign_positive()),
            (Value::Float(x), Value::Float(y)) => prop_assert_eq!(x.to_bits(), y.to_bits()),
            _ => prop_assert_eq!(v, &back),
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn int_order_and_round_trip(a in any::<i64>(), b in any::<i64>()) {
        check_pair(Value::Int(a), Value::Int(b), ColumnType::Int)?;
    }

    #[test]
    fn float_order_and_round_trip(a in float_strategy(), b in float_strategy()) {
        check_pair(Value::Float(a), Value::Float(b), ColumnType::Float)?;
    }

    #[test]
    fn text_order_and_round_trip(a in text_strategy(), b in text_strategy()) {
        check_pair(Value::Text(a), Value::Text(b), ColumnType::Text)?;
    }
}

#[test]
fn workload_matches_reference_on_one_and_four_servers() {
    let (sqls, want, db) = common::sql_workload(5, 1_500);
    let mut runs = Vec::new();
    for servers in [1, 4] {
        let (_lb, client) = common::loopback_client(servers);
        let run = common::run_sql(client, &sqls, 6);
        let bad = common::sql_mismatches(&sqls, &want, &db, &run);
        assert!(bad.is_empty(), "{servers} server(s):\n{}", bad.join("\n"));
        runs.push(run.outcomes);
    }
    assert_eq!(runs[0], runs[1]);
    let summary = common::outcome_summary(&want);
    for class in ["rows", "count", "ok", "err:plan", "err:duplicate-key"] {
        assert!(summary.contains_key(class), "workload never produced {class}: {summary:?}");
    }
    assert!(common::distinct_nonempty(&want) > 50);
}

#[test]
fn tcp_and_loopback_transports_agree() {
    let (sqls, want, db) = common::sql_workload(9, 400);
    let handles: Vec<_> = (0..2)
        .map(|i| {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            net::serve(l, Arc::new(KvServer::in_memory(ServerId(i), 2))).unwrap()
        })
        .collect();
    let addrs = handles.iter().map(|h| h.addr().to_string()).collect();
    let tcp = common::run_sql(Client::new(Arc::new(TcpTransport::new(addrs))), &sqls, 6);
    let (_lb, client) = common::loopback_client(2);
    let lb = common::run_sql(client, &sqls, 6);
    assert!(common::sql_mismatches(&sqls, &want, &db, &tcp).is_empty());
    assert_eq!(tcp.outcomes, lb.outcomes);
    assert_eq!(tcp.contents, lb.contents);
    for h in handles {
        h.stop();
    }
}

fn race_create(policy: Policy) -> (dbtree::wire::sched::Trace, Vec<Result<(), String>>) {
    let (_lb, client) = common::loopback_client(2);
    let results = Mutex::new(Vec::new());
    let jobs: Vec<Box<dyn FnOnce() + Send + '_>> = (0..2)
        .map(|_| {
            let mut session = Session::new(client.clone());
            let results = &results;
            Box::new(move || {
                let r = session.execute("CREATE TABLE t (id INT PRIMARY KEY, v TEXT)");
                results.lock().unwrap().push(match r {
                    Ok(_) => Ok(()),
                    Err(SqlError::DuplicateTable(t)) => Err(t),
                    Err(e) => panic!("unexpected {e}"),
                });
            }) as Box<dyn FnOnce() + Send>
        })
        .collect();
    let trace = Scheduler::run(policy, jobs);
    (trace, results.into_inner().unwrap())
}

#[test]
fn racing_create_table_one_wins() {
    let check = |rs: &[Result<(), String>]| {
        assert_eq!(rs.iter().filter(|r| r.is_ok()).count(), 1, "{rs:?}");
        assert_eq!(rs.iter().filter(|r| r.as_ref().err().map(String::as_str) == Some("t")).count(), 1, "{rs:?}");
    };
    for seed in 0..40 {
        check(&race_create(Policy::Seeded(seed)).1);
    }
    let runs = explore(
        |script| {
            let (trace, rs) = race_create(Policy::Script(script));
            check(&rs);
            trace
        },
        300,
    );
    assert!(runs > 10);
}

#[test]
fn order_by_pk_follows_encoding_order() {
    let (_lb, client) = common::loopback_client(2);
    let mut s = Session::new(client);
    s.execute("CREATE TABLE p (k TEXT PRIMARY KEY, n INT)").unwrap();
    let keys = ["", "\0", "a", "a\0", "a\0\0", "a\u{1}", "ab", "b", "é", "Z"];
    for (i, k) in keys.iter().enumerate() {
        s.execute(&format!("INSERT INTO p VALUES ({}, {i})", Value::Text(k.to_string()).to_sql())).unwrap();
    }
    let QueryResult::Rows { rows, .. } = s.execute("SELECT k FROM p ORDER BY k").unwrap() else { panic!() };
    let got: Vec<Value> = rows.into_iter().map(|mut r| r.remove(0)).collect();
    let mut want: Vec<Value> = keys.iter().map(|k| Value::Text(k.to_string())).collect();
    want.sort_by_key(|v| encode_key(v).unwrap());
    assert_eq!(got, want);
}
