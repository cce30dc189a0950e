use pixelvem::fem::{fem_solve, FemConfig};
use pixelvem::geometry::{ImplicitDomain, ManufacturedCase};
use pixelvem::pixelmesh::{classify_pixels, ClassifyRule};

fn main() {
    let case = ManufacturedCase::test1a();
    let table_l2 = [4.1209e-2, 2.1858e-2, 1.0725e-2, 5.1909e-3, 2.6045e-3];
    let table_h1 = [1.8095e-1, 1.1855e-1, 7.5812e-2, 5.2118e-2, 3.5581e-2];
    println!("  h        abs0      abs1      e0        e1       | tbl L2    tbl H1   ratios(abs, rel)");
    for (i, exp) in (3..=7).enumerate() {
        let h = 0.5f64.powi(exp);
        let grid = classify_pixels(&ImplicitDomain::unit_disk(), h, ClassifyRule::Contained).unwrap();
        let sol = fem_solve(&grid, &case, &FemConfig::plain(1)).unwrap();
        let n = sol.norms;
        println!(
            "2^-{exp}: {:.3e} {:.3e} {:.3e} {:.3e} | {:.3e} {:.3e} | L2 {:.2} {:.2}  H1 {:.2} {:.2}",
            n.abs0, n.abs1, n.e0, n.e1, table_l2[i], table_h1[i],
            n.abs0 / table_l2[i], n.e0 / table_l2[i], n.abs1 / table_h1[i], n.e1 / table_h1[i]
        );
    }
}
