//! One line per acceptance criterion; exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use common::*;
use literati_core::annotation_store::{make_split, BoundingBox, CoordSpace, SplitRatios};
use literati_core::eval_harness::{
    accuracy_table, evaluate_image, iou, render_table, MatchMode, ScoredBox, TableFormat,
};
use literati_core::map_decoder::synthetic::SceneConfig;
use literati_core::map_decoder::{maximal_filter_regions, softmax_map, LogitMap, MapShape};
use literati_core::numeric_heads::{conv1d_layer_select, grad_check, GradCase, GradOp, LayerStack, Tensor};
use literati_core::report_parser::Lexicon;
use literati_core::tpe_tuner::{optimize, random_search, ParamKind, ParamSpec, Params, SearchSpace, TpeConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    run: fn() -> Outcome,
}

fn table_regression() -> Outcome {
    for name in ["method_comparison.json", "phrase_levels.json"] {
        let fx = table_fixture(name);
        let csv = render_table(&fixture_table(&fx), TableFormat::Csv);
        let expected = fx.expected_csv.join("\n") + "\n";
        if csv != expected {
            return Err(format!("{name}: rendered\n{csv}expected\n{expected}"));
        }
    }
    Ok("method comparison and phrase-level rows byte-exact".into())
}

fn decoder_oracle() -> Outcome {
    let mut regions = 0;
    for seed in 0..200 {
        let (map, params) = random_prob_map(seed, 32);
        for k in map.class_channels() {
            let fast = maximal_filter_regions(&map, k, &params).map_err(|e| e.to_string())?;
            let slow = oracle_regions(&map, k, &params);
            if fast != slow {
                return Err(format!("seed {seed}, class {k}: {} vs {} regions", fast.len(), slow.len()));
            }
            regions += fast.len();
        }
    }
    Ok(format!("200 maps, {regions} regions identical"))
}

fn synthetic_end_to_end() -> Outcome {
    let single = synthetic_accuracy(0..50, &SceneConfig::default(), 0.3, MatchMode::Top1);
    let two = SceneConfig { boxes: 2, ..SceneConfig::default() };
    let recall = synthetic_accuracy(0..50, &two, 0.3, MatchMode::GreedyMulti);
    let detail = format!("top1 accuracy {single:.3} at IOU 0.3, two-peak greedy recall {recall:.3}");
    if single == 1.0 && recall >= 0.95 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_suite() -> Outcome {
    let mut parts = Vec::new();
    for op in GradOp::ALL {
        let mut worst = 0.0f64;
        for seed in 0..100 {
            let report = grad_check(&GradCase::random(op, seed), 1e-6).map_err(|e| e.to_string())?;
            worst = worst.max(report.max_rel_error);
        }
        if worst >= op.tolerance() {
            return Err(format!("{op}: max relative error {worst:.2e} >= {:.0e}", op.tolerance()));
        }
        parts.push(format!("{op} {worst:.1e}"));
    }
    Ok(parts.join(", "))
}

fn parser_fixtures() -> Outcome {
    let lex = Lexicon::bundled();
    let phrases = phrase_cases();
    let negations = negation_cases();
    let mut failures: Vec<String> = phrases.iter().filter_map(|c| check_phrase(c, &lex).err()).collect();
    failures.extend(negations.iter().filter_map(|c| check_negation(c, &lex).err()));
    if failures.is_empty() {
        Ok(format!("{} phrases and {} negation sentences match", phrases.len(), negations.len()))
    } else {
        Err(failures.join("; "))
    }
}

fn baseline_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (layers, width) = (12, 768);
    let stack = LayerStack::new(layers, width, (0..layers * width).map(|_| rng.random_range(-4.0..4.0)).collect())
        .map_err(|e| e.to_string())?;
    let last = stack.last(4).map_err(|e| e.to_string())?;
    let out = conv1d_layer_select(&last, &Tensor::from_vec(vec![0.25; 4]).unwrap(), 1).map_err(|e| e.to_string())?;
    let worst = (0..width)
        .map(|d| {
            let avg = (layers - 4..layers).map(|l| stack.layer(l)[d]).sum::<f64>() / 4.0;
            (out.data()[d] - avg).abs()
        })
        .fold(0.0, f64::max);
    if worst < 1e-12 {
        Ok(format!("max deviation {worst:.1e}"))
    } else {
        Err(format!("max deviation {worst:.1e}"))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn tpe_benchmark() -> Outcome {
    let space = SearchSpace::new(vec![ParamSpec {
        name: "x".into(),
        kind: ParamKind::Uniform { low: 0.0, high: 10.0 },
    }])
    .unwrap();
    let f = |p: &Params| Ok::<f64, String>(-(p["x"].as_f64().unwrap() - 2.0).powi(2));
    let (mut tpe, mut tpe_x, mut rnd) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..20 {
        let run = optimize(f, &space, 60, &TpeConfig::with_seed(seed)).map_err(|e| e.to_string())?;
        tpe.push(run.best.objective.unwrap());
        tpe_x.push(run.best.params["x"].as_f64().unwrap());
        rnd.push(random_search(f, &space, 60, seed).map_err(|e| e.to_string())?.best.objective.unwrap());
    }
    let (t, r, x) = (median(tpe), median(rnd), median(tpe_x));
    let detail = format!("median best tpe {t:.2e} vs random {r:.2e}, median best x {x:.4}");
    if t >= r && (x - 2.0).abs() <= 0.15 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn arb_native_box() -> impl Strategy<Value = BoundingBox> {
    arb_box(CoordSpace::Native)
}

fn fail<T: std::fmt::Debug>(name: &str, e: proptest::test_runner::TestError<T>) -> String {
    format!("{name}: {e}")
}

fn property_suites() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });

    runner
        .run(&(1usize..500, any::<u64>(), 0.0f64..0.45, 0.0f64..0.45), |(n, seed, val, test)| {
            let ratios = SplitRatios::new(1.0 - val - test, val, test).unwrap();
            let all: Vec<String> = (0..n).map(|i| format!("id{i:05}")).collect();
            let split = make_split(&all, ratios, seed).unwrap();
            let mut union: Vec<String> =
                split.train_ids.iter().chain(&split.val_ids).chain(&split.test_ids).cloned().collect();
            union.sort();
            prop_assert_eq!(&union, &all);
            prop_assert_eq!(split.val_ids.len(), ((n as f64) * val + 1e-9).floor() as usize);
            prop_assert_eq!(split.test_ids.len(), ((n as f64) * test + 1e-9).floor() as usize);
            Ok(())
        })
        .map_err(|e| fail("split partition", e))?;

    runner
        .run(&(arb_native_box(), arb_native_box(), 0.05f64..20.0, 0.05f64..20.0), |(a, b, sx, sy)| {
            let ab = iou(&a, &b).unwrap();
            prop_assert_eq!(ab, iou(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
            prop_assert!(a == b || ab < 1.0);
            let scale = |q: &BoundingBox| BoundingBox {
                x: q.x * sx,
                y: q.y * sy,
                w: q.w * sx,
                h: q.h * sy,
                space: q.space,
            };
            prop_assert!((iou(&scale(&a), &scale(&b)).unwrap() - ab).abs() < 1e-9);
            Ok(())
        })
        .map_err(|e| fail("iou", e))?;

    let logits = (2usize..5, 1usize..8, 1usize..8)
        .prop_flat_map(|(k, h, w)| (Just((k, h, w)), prop::collection::vec(-60.0f64..60.0, k * h * w)));
    runner
        .run(&logits, |((k, h, w), values)| {
            let probs = softmax_map(&LogitMap::new(MapShape::new(k, h, w), values, 0).unwrap()).unwrap();
            for r in 0..h {
                for c in 0..w {
                    let total: f64 = (0..k).map(|ch| probs.get(ch, r, c)).sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                }
            }
            Ok(())
        })
        .map_err(|e| fail("softmax", e))?;

    let images = prop::collection::vec(
        (
            prop::collection::vec((arb_native_box(), 0.0f64..1.0), 0..5),
            prop::collection::vec(arb_native_box(), 1..4),
        ),
        1..10,
    );
    runner
        .run(&images, |images| {
            for mode in [MatchMode::Top1, MatchMode::GreedyMulti] {
                let results: Vec<_> = images
                    .iter()
                    .enumerate()
                    .map(|(i, (dets, gts))| {
                        let mut dets: Vec<ScoredBox> =
                            dets.iter().map(|(bbox, confidence)| ScoredBox { bbox: *bbox, confidence: *confidence }).collect();
                        dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
                        evaluate_image(&format!("img{i}"), &dets, gts, mode).unwrap()
                    })
                    .collect();
                let acc = accuracy_table("m", &results).unwrap().rows[0].accuracy;
                prop_assert!(acc.windows(2).all(|w| w[0] >= w[1]));
            }
            Ok(())
        })
        .map_err(|e| fail("threshold monotonicity", e))?;

    Ok("split, IOU, softmax and monotonicity suites at 1000 cases each".into())
}

fn main() {
    let criteria = [
        Criterion {
            name: "table regression",
            budget: Some(Duration::from_secs(1)),
            run: table_regression,
        },
        Criterion {
            name: "decoder oracle equivalence",
            budget: Some(Duration::from_secs(10)),
            run: decoder_oracle,
        },
        Criterion {
            name: "synthetic end-to-end",
            budget: Some(Duration::from_secs(30)),
            run: synthetic_end_to_end,
        },
        Criterion {
            name: "gradient suite",
            budget: Some(Duration::from_secs(60)),
            run: gradient_suite,
        },
        Criterion {
            name: "parser fixtures",
            budget: None,
            run: parser_fixtures,
        },
        Criterion {
            name: "baseline recovery",
            budget: None,
            run: baseline_recovery,
        },
        Criterion {
            name: "tpe benchmark",
            budget: Some(Duration::from_secs(10)),
            run: tpe_benchmark,
        },
        Criterion {
            name: "split/iou properties",
            budget: Some(Duration::from_secs(30)),
            run: property_suites,
        },
    ];

    println!("note published accuracy figures: not reproducible here (needs credentialed chest x-ray images and GPU training)");
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let over = c.budget.is_some_and(|b| elapsed > b);
        let (status, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; took {elapsed:.2?}, budget {:?}", c.budget.unwrap())),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("{status} {} ({elapsed:.2?}): {detail}", c.name);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
