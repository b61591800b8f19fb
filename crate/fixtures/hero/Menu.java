import java.util.Scanner;

public class Menu {
    private final Scanner in;

    public Menu(Scanner in) {
        this.in = in;
    }

    public int show() {
        System.out.println("1. Play as hero");
        System.out.println("2. Play as villain");
        System.out.println("3. Visit shop");
        System.out.println("4. Quit");
        System.out.print("> ");
        return in.nextInt();
    }

    public String askName() {
        System.out.print("Character name: ");
        return in.next();
    }
}
