use std::net::TcpListener;

use privdiv_mpc::dealer::{generate_pair, write_triple_file, Material};
use privdiv_mpc::net::{serve_dealer, tcp_session, PeerLink};
use privdiv_mpc::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn cfg() -> FixedPointConfig {
    FixedPointConfig::default()
}

/// Upper-tail p-value of a chi-square goodness-of-fit test for uniform low bytes.
fn low_byte_uniformity_p(words: impl Iterator<Item = u64>) -> f64 {
    let mut counts = [0f64; 256];
    let mut n = 0f64;
    for w in words {
        counts[(w & 0xFF) as usize] += 1.0;
        n += 1.0;
    }
    let expected = n / 256.0;
    let stat: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new(255.0).unwrap().cdf(stat)
}

#[test]
fn first_share_of_a_constant_is_uniform() {
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let v = RingTensor::scalar(7.25, cfg()).unwrap();
    let words = (0..10_000).map(|_| share(&v, 1, &mut rng).0.share()[0]);
    let p = low_byte_uniformity_p(words);
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn triple_a_shares_are_uniform() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let ts = dealer_generate(10_000, TripleKind::Elementwise { len: 1 }, 1, cfg(), &mut rng).unwrap();
    let p = low_byte_uniformity_p(ts.iter().map(|(t0, _)| t0.a.share()[0]));
    assert!(p > 0.001, "p = {p}");
}

#[test]
fn share_reconstruct_examples() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let v = RingTensor::scalar(7.25, cfg()).unwrap();
    let (a, b) = share(&v, 9, &mut rng);
    assert_eq!(reconstruct(&a, &b).unwrap().to_f64(), vec![7.25]);

    let zero = RingTensor::scalar(0.0, cfg()).unwrap();
    let (a, b) = share(&zero, 9, &mut rng);
    assert_eq!(a.share()[0].wrapping_add(b.share()[0]), 0);
    assert_eq!(reconstruct(&a, &b.neg()).unwrap().data()[0], a.share()[0].wrapping_sub(b.share()[0]));

    let one = RingTensor::scalar(1.0, cfg()).unwrap();
    let (a, b) = share(&one, 9, &mut rng);
    assert_eq!(reconstruct(&a, &b).unwrap().data(), &[65536]);
    // reconstruct(s, neg(s)) = 0 when both shares are negated together.
    assert_eq!(reconstruct(&a.neg(), &b.neg()).unwrap().data(), &[0u64.wrapping_sub(65536)]);
    let s = reconstruct(&a, &b).unwrap();
    let (n0, n1) = (a.neg(), b.neg());
    let sum0 = a.add(&n0).unwrap();
    let sum1 = b.add(&n1).unwrap();
    assert_eq!(reconstruct(&sum0, &sum1).unwrap().data(), &[0]);
    let two = RingTensor::scalar(2.0, cfg()).unwrap();
    let back = reconstruct(&a.add_public(&two).unwrap(), &b.add_public(&two).unwrap()).unwrap();
    assert_eq!(back.to_f64()[0], s.to_f64()[0] + 2.0);

    let other_session = share(&one, 10, &mut rng).1;
    assert!(matches!(reconstruct(&a, &other_session), Err(MpcError::SessionMismatch(9, 10))));
    let vec2 = RingTensor::zeros(vec![2], cfg());
    let (_, c1) = share(&vec2, 9, &mut rng);
    assert!(matches!(reconstruct(&a, &c1), Err(MpcError::ShapeMismatch(..))));
}

#[test]
fn secure_add_matches_plaintext() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let xs: Vec<f64> = (0..64).map(|_| rng.random_range(-8.0..8.0)).collect();
        let ys: Vec<f64> = (0..64).map(|_| rng.random_range(-8.0..8.0)).collect();
        let x = RingTensor::from_f64(vec![64], &xs, cfg()).unwrap();
        let y = RingTensor::from_f64(vec![64], &ys, cfg()).unwrap();
        let (x0, x1) = share(&x, 1, &mut rng);
        let (y0, y1) = share(&y, 1, &mut rng);
        let z = reconstruct(&secure_add(&x0, &y0).unwrap(), &secure_add(&x1, &y1).unwrap()).unwrap();
        for (i, got) in z.to_f64().iter().enumerate() {
            assert!((got - (decode(x.data()[i], cfg()) + decode(y.data()[i], cfg()))).abs() < 1e-12);
        }
    }
}

fn vec_input(s: &mut Session, owner: PartyId, vals: Option<&[f64]>, n: usize) -> SharedTensor {
    let t = vals.map(|v| RingTensor::from_f64(vec![n], v, s.cfg()).unwrap());
    s.input(owner, t.as_ref(), vec![n]).unwrap()
}

#[test]
fn secure_mul_thousand_pairs() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let n = 1000;
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
    let ys: Vec<f64> = (0..n).map(|_| rng.random_range(-8.0..8.0)).collect();
    let spec = SessionSpec::from_seed(1, 99);
    let (xa, ya) = (xs.clone(), ys.clone());
    let run = run_local(
        &spec,
        move |s| {
            let x = vec_input(s, PartyId::P0, Some(&xa), n);
            let y = vec_input(s, PartyId::P1, None, n);
            let z = s.mul(&x, &y)?;
            s.open(&z, Tag::Final)
        },
        move |s| {
            let x = vec_input(s, PartyId::P0, None, n);
            let y = vec_input(s, PartyId::P1, Some(&ya), n);
            let z = s.mul(&x, &y)?;
            s.open(&z, Tag::Final)
        },
    )
    .unwrap();
    assert_eq!(run.out0, run.out1);
    let got = run.out0.to_f64();
    let max = (0..n)
        .map(|i| {
            let exact = decode(encode(xs[i], cfg()).unwrap(), cfg()) * decode(encode(ys[i], cfg()).unwrap(), cfg());
            (got[i] - exact).abs()
        })
        .fold(0.0, f64::max);
    assert!(max <= 2f64.powi(-13), "max error {max}");
}

#[test]
fn explicit_triples_examples_and_reuse() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let spec = SessionSpec::from_seed(7, 1);
    let mut ts = dealer_generate(2, TripleKind::Elementwise { len: 1 }, 7, cfg(), &mut rng).unwrap();
    let (t0b, t1b) = ts.pop().unwrap();
    let (t0a, t1a) = ts.pop().unwrap();
    let dup0 = BeaverTriple { id: t0a.id, kind: t0a.kind, a: t0a.a.clone(), b: t0a.b.clone(), c: t0a.c.clone() };
    let dup1 = BeaverTriple { id: t1a.id, kind: t1a.kind, a: t1a.a.clone(), b: t1a.b.clone(), c: t1a.c.clone() };
    let body = |s: &mut Session, mine: PartyId, ta: BeaverTriple, tb: BeaverTriple, dup: BeaverTriple| {
        let three = (mine == PartyId::P0).then_some(&[3.0][..]);
        let four = (mine == PartyId::P1).then_some(&[4.0][..]);
        let x = vec_input(s, PartyId::P0, three, 1);
        let y = vec_input(s, PartyId::P1, four, 1);
        let z = s.secure_mul(&x, &y, ta)?;
        let twelve = s.open(&z, Tag::Mask)?.to_f64()[0];
        let zero = s.public_f64(vec![1], &[0.0])?;
        let z0 = s.secure_mul(&x, &zero, tb)?;
        let annihilated = s.open(&z0, Tag::Final)?.to_f64()[0];
        let reuse = s.secure_mul(&x, &y, dup);
        Ok::<_, MpcError>((twelve, annihilated, matches!(reuse, Err(MpcError::TripleReuse(_)))))
    };
    let run = run_local(
        &spec,
        move |s| body(s, PartyId::P0, t0a, t0b, dup0),
        move |s| body(s, PartyId::P1, t1a, t1b, dup1),
    )
    .unwrap();
    let (twelve, zero, reused) = run.out0;
    assert!((twelve - 12.0).abs() <= 2f64.powi(-16));
    assert!(zero.abs() <= 2f64.powi(-16));
    assert!(reused);
}

fn random_matrix(rng: &mut ChaCha12Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[test]
fn secure_matmul_thousand_instances() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let cases: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
        .map(|_| (random_matrix(&mut rng, 32 * 8, -4.0, 4.0), random_matrix(&mut rng, 8, -4.0, 4.0)))
        .collect();
    let xs: Vec<Vec<f64>> = cases.iter().map(|c| c.0.clone()).collect();
    let ws: Vec<Vec<f64>> = cases.iter().map(|c| c.1.clone()).collect();
    let spec = SessionSpec::from_seed(2, 5);
    let body = |s: &mut Session, xs: Option<Vec<Vec<f64>>>, ws: Option<Vec<Vec<f64>>>| -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        for i in 0..1000 {
            let xv = xs.as_ref().map(|v| RingTensor::from_f64(vec![32, 8], &v[i], s.cfg()).unwrap());
            let wv = ws.as_ref().map(|v| RingTensor::from_f64(vec![8, 1], &v[i], s.cfg()).unwrap());
            let x = s.input(PartyId::P0, xv.as_ref(), vec![32, 8])?;
            let w = s.input(PartyId::P1, wv.as_ref(), vec![8, 1])?;
            let z = s.matmul(&x, &w)?;
            out.push(s.open(&z, Tag::Mask)?.to_f64());
        }
        Ok(out)
    };
    let run = run_local(&spec, move |s| body(s, Some(xs), None), move |s| body(s, None, Some(ws))).unwrap();
    let mut max = 0f64;
    for (i, (x, w)) in cases.iter().enumerate() {
        for r in 0..32 {
            let exact: f64 = (0..8).map(|j| x[r * 8 + j] * w[j]).sum();
            max = max.max((run.out0[i][r] - exact).abs());
        }
    }
    assert!(max <= 2f64.powi(-10), "max error {max}");
}

#[test]
fn matmul_identity_and_zero() {
    let spec = SessionSpec::from_seed(3, 5);
    let w = [0.5, -1.25, 3.0];
    let body = move |s: &mut Session| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let id = s.public_f64(vec![3, 3], &eye)?;
        let zero = s.public_f64(vec![3, 3], &[0.0; 9])?;
        let wv = (s.party() == PartyId::P1).then(|| RingTensor::from_f64(vec![3, 1], &w, s.cfg()).unwrap());
        let ws = s.input(PartyId::P1, wv.as_ref(), vec![3, 1])?;
        let a = s.matmul(&id, &ws)?;
        let b = s.matmul(&zero, &ws)?;
        let both = SharedTensor::concat(&[&a, &b])?;
        let v = s.open(&both, Tag::Final)?.to_f64();
        Ok((v[..3].to_vec(), v[3..].to_vec()))
    };
    let run = run_local(&spec, body, body).unwrap();
    let (a, b) = run.out0;
    for i in 0..3 {
        assert!((a[i] - w[i]).abs() <= 2f64.powi(-15));
        assert!(b[i].abs() <= 2f64.powi(-15));
    }
}

#[test]
fn shape_mismatch_is_reported_before_communicating() {
    let spec = SessionSpec::from_seed(4, 5);
    let body = |s: &mut Session| -> Result<bool> {
        let a = s.public_f64(vec![2, 3], &[0.0; 6])?;
        let b = s.public_f64(vec![2, 1], &[0.0; 2])?;
        Ok(matches!(s.matmul(&a, &b), Err(MpcError::ShapeMismatch(..)))
            && matches!(s.mul(&a, &b), Err(MpcError::ShapeMismatch(..))))
    };
    let run = run_local(&spec, body, body).unwrap();
    assert!(run.out0 && run.out1);
}

#[test]
fn ltz_is_exact() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let mut vals: Vec<f64> = (0..2000).map(|_| rng.random_range(-1000.0..1000.0)).collect();
    vals.extend([0.0, -0.0, 1.0 / 65536.0, -1.0 / 65536.0, 1.0e13, -1.0e13, 16.0, -16.0]);
    let n = vals.len();
    let spec = SessionSpec::from_seed(5, 5);
    let v0 = vals.clone();
    let run = run_local(
        &spec,
        move |s| {
            let x = vec_input(s, PartyId::P0, Some(&v0), n);
            let b = s.ltz(&x)?;
            Ok::<_, MpcError>((s.open(&b, Tag::Final)?, s.rounds()))
        },
        move |s| {
            let x = vec_input(s, PartyId::P0, None, n);
            let b = s.ltz(&x)?;
            Ok((s.open(&b, Tag::Final)?, s.rounds()))
        },
    )
    .unwrap();
    let (bits, rounds) = run.out0;
    for (i, v) in vals.iter().enumerate() {
        let want = (encode(*v, cfg()).unwrap() as i64) < 0;
        assert_eq!(bits.data()[i], want as u64, "value {v}");
    }
    // 8 rounds for the comparison plus the final open.
    assert_eq!(rounds, 9);
}

#[test]
fn mismatched_open_is_a_desync() {
    let spec = SessionSpec::from_seed(6, 5);
    let err = run_local(
        &spec,
        |s| {
            let a = s.public_f64(vec![1], &[1.0])?;
            s.open(&a, Tag::Final).map(|_| ())
        },
        |s| {
            let b = s.public_f64(vec![1], &[2.0])?;
            s.open(&b, Tag::Final).map(|_| ())
        },
    )
    .err()
    .unwrap();
    assert!(matches!(err, MpcError::ProtocolDesync(_)), "{err:?}");
}

fn sample_run(spec: &SessionSpec) -> LocalRun<f64, f64> {
    let body = |s: &mut Session| -> Result<f64> {
        let mine = [1.5, -2.0, 0.25, 4.0];
        let x = s.input(
            PartyId::P0,
            (s.party() == PartyId::P0).then(|| RingTensor::from_f64(vec![4], &mine, s.cfg()).unwrap()).as_ref(),
            vec![4],
        )?;
        let y = s.input(
            PartyId::P1,
            (s.party() == PartyId::P1).then(|| RingTensor::from_f64(vec![4], &mine, s.cfg()).unwrap()).as_ref(),
            vec![4],
        )?;
        let z = s.mul(&x, &y)?;
        let neg = s.ltz(&z.add_scalar(-3.0)?)?;
        let total = z.sum().add(&neg.mul_int(s.cfg().one() as i64).sum())?;
        Ok(s.open(&total, Tag::Final)?.to_f64()[0])
    };
    run_local(spec, body, body).unwrap()
}

#[test]
fn transcripts_are_deterministic_and_agree_between_parties() {
    let spec = SessionSpec::from_seed(11, 42);
    let a = sample_run(&spec);
    let b = sample_run(&spec);
    assert_eq!(a.out0, a.out1);
    // Products sum to 22.3125; two of them are below 3.
    assert!((a.out0 - 24.3125).abs() < 1e-3, "{}", a.out0);
    assert_eq!(a.report0.transcript, a.report1.transcript);
    assert_eq!(a.report0.transcript, b.report0.transcript);
    let other = sample_run(&SessionSpec::from_seed(11, 43));
    assert_ne!(a.report0.transcript.party0, other.report0.transcript.party0);
    let audit = a.report0.trace.audit();
    assert_eq!(audit.final_opens, 1);
    assert_eq!(audit.data_opens, 0);
    assert_eq!(audit.inputs, 2);
}

#[test]
fn tcp_mode_matches_in_process_transcript() {
    let spec = SessionSpec::from_seed(12, 7);
    let local = sample_run(&spec);

    let dealer_l = TcpListener::bind("127.0.0.1:0").unwrap();
    let dealer_addr = dealer_l.local_addr().unwrap().to_string();
    let peer_l = TcpListener::bind("127.0.0.1:0").unwrap();
    let peer_addr = peer_l.local_addr().unwrap().to_string();
    let dealer = std::thread::spawn(move || serve_dealer(&dealer_l, spec.dealer_seed).unwrap());
    let body = |s: &mut Session| -> Result<f64> {
        let mine = [1.5, -2.0, 0.25, 4.0];
        let x = s.input(
            PartyId::P0,
            (s.party() == PartyId::P0).then(|| RingTensor::from_f64(vec![4], &mine, s.cfg()).unwrap()).as_ref(),
            vec![4],
        )?;
        let y = s.input(
            PartyId::P1,
            (s.party() == PartyId::P1).then(|| RingTensor::from_f64(vec![4], &mine, s.cfg()).unwrap()).as_ref(),
            vec![4],
        )?;
        let z = s.mul(&x, &y)?;
        let neg = s.ltz(&z.add_scalar(-3.0)?)?;
        let total = z.sum().add(&neg.mul_int(s.cfg().one() as i64).sum())?;
        Ok(s.open(&total, Tag::Final)?.to_f64()[0])
    };
    let da = dealer_addr.clone();
    let p1 = std::thread::spawn(move || {
        let mut s = tcp_session(PartyId::P1, &spec, PeerLink::Connect(&peer_addr), &da, RetryPolicy::default()).unwrap();
        let v = body(&mut s).unwrap();
        (v, s.finish().unwrap())
    });
    let mut s0 = tcp_session(PartyId::P0, &spec, PeerLink::Listen(&peer_l), &dealer_addr, RetryPolicy::default()).unwrap();
    let v0 = body(&mut s0).unwrap();
    let r0 = s0.finish().unwrap();
    let (v1, r1) = p1.join().unwrap();
    dealer.join().unwrap();
    assert_eq!(v0, v1);
    assert_eq!(v0, local.out0);
    assert_eq!(r0.transcript, r1.transcript);
    assert_eq!(r0.transcript, local.report0.transcript);
}

#[test]
fn offline_triple_files_drive_a_session() {
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let (m0, m1): (Vec<Material>, Vec<Material>) = (0..3)
        .map(|_| generate_pair(TripleKind::Elementwise { len: 2 }, &mut rng).unwrap())
        .unzip();
    let dir = tempfile::tempdir().unwrap();
    let (f0, f1) = (dir.path().join("p0.bin"), dir.path().join("p1.bin"));
    write_triple_file(&f0, &m0).unwrap();
    write_triple_file(&f1, &m1).unwrap();

    let (l0, l1) = channel_pair();
    let spec = SessionSpec::from_seed(14, 1);
    let run = |party: PartyId, link: ChannelTransport, path: std::path::PathBuf| {
        move || -> Result<f64> {
            let src = TripleFileSource::open(&path)?;
            let mut s = Session::new(party, spec.session, spec.cfg, spec.mask_seeds[party.index()], Box::new(link), Box::new(src))?;
            let x = s.public_f64(vec![2], &[1.5, 2.0])?;
            let mut acc = x.clone();
            for _ in 0..3 {
                acc = s.mul(&acc, &x)?;
            }
            let v = s.open(&acc.sum(), Tag::Final)?.to_f64()[0];
            // A fourth product finds the file exhausted.
            assert!(matches!(s.mul(&acc, &x), Err(MpcError::TripleFile(_))));
            Ok(v)
        }
    };
    let h = std::thread::spawn(run(PartyId::P1, l1, f1));
    let v0 = run(PartyId::P0, l0, f0)().unwrap();
    let v1 = h.join().unwrap().unwrap();
    assert_eq!(v0, v1);
    assert!((v0 - (1.5f64.powi(4) + 16.0)).abs() < 1e-3);
}

#[test]
fn hello_rejects_mismatched_sessions() {
    let (l0, l1) = channel_pair();
    let (d0, c0) = channel_pair();
    let (d1, c1) = channel_pair();
    let dealer = std::thread::spawn(move || run_dealer(1, Box::new(d0), Box::new(d1)));
    let h = std::thread::spawn(move || {
        let corr = DealerClient::connect(PartyId::P1, 1, Box::new(c1)).unwrap();
        Session::new(PartyId::P1, 2, cfg(), 0, Box::new(l1), Box::new(corr)).err()
    });
    let corr = DealerClient::connect(PartyId::P0, 1, Box::new(c0)).unwrap();
    let e0 = Session::new(PartyId::P0, 1, cfg(), 0, Box::new(l0), Box::new(corr)).err();
    let e1 = h.join().unwrap();
    assert!(matches!(e0, Some(MpcError::SessionMismatch(1, 2))));
    assert!(matches!(e1, Some(MpcError::SessionMismatch(2, 1))));
    drop(dealer);
}

#[test]
fn dealer_rejects_mismatched_hello_sessions() {
    let (d0, c0) = channel_pair();
    let (d1, c1) = channel_pair();
    let dealer = std::thread::spawn(move || run_dealer(1, Box::new(d0), Box::new(d1)));
    let h = std::thread::spawn(move || DealerClient::connect(PartyId::P1, 4, Box::new(c1)).err());
    let _ = DealerClient::connect(PartyId::P0, 3, Box::new(c0));
    let _ = h.join().unwrap();
    assert!(matches!(dealer.join().unwrap(), Err(MpcError::SessionMismatch(3, 4))));
}
