fn main() {
    println!("eave");
}
