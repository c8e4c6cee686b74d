use sparsecode::lista::{lista_train, ListaModel, TrainCfg};
use sparsecode::pbp::{pbp_train, PbpState, PbpTrainCfg};
use sparsecode::mat::dot;
use sparsecode::rng::{seeded, stream};
use sparsecode_bench::data::{gen_design, synthetic_images};
use sparsecode_bench::run::nmse;
use sparsecode::Mat;

fn main() {
    let images = synthetic_images(200, 777);
    let b_train = Mat::from_fn(100, 784, |i, j| images[(i, j)]);
    let b_test = Mat::from_fn(100, 784, |i, j| images[(100 + i, j)]);
    for k in [100usize, 250] {
        let (mut lista_sum, mut bayes_sum) = (0.0, 0.0);
        for seed in 0..3u64 {
            let x = gen_design(k, 784, &mut seeded(seed, stream::DESIGN));
            let y_train = Mat::from_fn(100, k, |i, j| dot(x.row(j), b_train.row(i)));
            let y_test = Mat::from_fn(100, k, |i, j| dot(x.row(j), b_test.row(i)));
            let pred_l = |m: &ListaModel| -> Mat {
                let mut p = Mat::zeros(100, 784);
                for i in 0..100 {
                    p.row_mut(i).copy_from_slice(&sparsecode::lista::lista_forward(m, y_test.row(i)));
                }
                p
            };
            let init = ListaModel::from_design(&x, 0.1, 4).unwrap();
            let m = lista_train(&y_train, &b_train, &init, TrainCfg { epochs: 40, step: 1e-6, seed }).unwrap();
            let l_nmse = nmse(&pred_l(&m), &b_test).unwrap();

            let q0 = PbpState::from_design(&x, 0.1, 4).unwrap();
            let (q, _) = pbp_train(&y_train, &b_train, &q0, PbpTrainCfg { epochs: 15, seed, update_priors: true }).unwrap();
            let mut p = Mat::zeros(100, 784);
            for i in 0..100 {
                p.row_mut(i).copy_from_slice(&q.predict(y_test.row(i)).0);
            }
            let b_nmse = nmse(&p, &b_test).unwrap();
            println!("k={k} seed={seed}: lista={l_nmse:.4} bayes={b_nmse:.4}");
            lista_sum += l_nmse;
            bayes_sum += b_nmse;
        }
        println!("k={k} MEAN: lista={:.4} bayes={:.4}", lista_sum / 3.0, bayes_sum / 3.0);
    }
}
