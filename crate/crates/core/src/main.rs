fn main() {
    println!("restoreib");
}
